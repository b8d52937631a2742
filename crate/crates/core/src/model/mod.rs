//! CNN/CRNN models, training and inference.

pub mod data;
pub mod network;
pub mod spec;
pub mod train;

use std::path::Path;

use serde_json::json;

pub use data::{make_instances, segment_input, targets_from_annotations, Instance, TrackData};
pub use network::Network;
pub use spec::{build_cnn, build_crnn, desk_cnn, desk_crnn, ConvBlock, ModelKind, NetworkSpec};
pub use train::{
    default_threshold_grid, select_threshold, train, train_with, EpochAction, LrSchedule, TrainConfig, TrainHistory,
    Trainer,
};

use crate::annotation::OnsetAnnotation;
use crate::audio::AudioBuffer;
use crate::datafactory::schema::SchemaName;
use crate::dsp::{FeatureConfig, FeatureExtractor, FeatureMatrix};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::nn::checkpoint::Checkpoint;
use crate::peakpick::{onsets_from_activations, ActivationMatrix, PeakParams};

/// A trained network plus everything needed to transcribe with it.
pub struct TrainedModel {
    pub net: Network<f32>,
    pub schema: SchemaName,
    pub feature_config: FeatureConfig,
    pub peak: PeakParams,
}

impl TrainedModel {
    pub fn classes(&self) -> Vec<Label> {
        self.schema.classes()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.net.to_checkpoint(json!({
            "schema": self.schema,
            "classes": self.classes().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "context": self.net.spec().context,
            "feature_config": self.feature_config,
            "feature_hash": self.feature_config.hash_hex(),
            "peak": self.peak,
        }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let field = |k: &str| {
            ck.header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header lacks `{k}`")))
        };
        let parse_err = |k: &str, e: serde_json::Error| Error::Checkpoint(format!("bad `{k}`: {e}"));
        let schema: SchemaName = serde_json::from_value(field("schema")?).map_err(|e| parse_err("schema", e))?;
        let feature_config: FeatureConfig =
            serde_json::from_value(field("feature_config")?).map_err(|e| parse_err("feature_config", e))?;
        let hash: String = serde_json::from_value(field("feature_hash")?).map_err(|e| parse_err("feature_hash", e))?;
        if hash != feature_config.hash_hex() {
            return Err(Error::Checkpoint("feature config does not match its hash".into()));
        }
        let peak: PeakParams = serde_json::from_value(field("peak")?).map_err(|e| parse_err("peak", e))?;
        let net = Network::from_checkpoint(ck)?;
        if net.spec().n_classes != schema.n_classes() {
            return Err(Error::Checkpoint(format!(
                "network has {} outputs but schema {schema} has {} classes",
                net.spec().n_classes,
                schema.n_classes()
            )));
        }
        Ok(Self { net, schema, feature_config, peak })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?).map_err(|e| Error::file(path, e.to_string()))
    }

    pub fn activations(&mut self, features: &FeatureMatrix) -> Result<ActivationMatrix> {
        self.net.predict(features)
    }

    pub fn featurize(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        FeatureExtractor::new(self.feature_config.clone())?.extract(audio)
    }

    pub fn transcribe(&mut self, audio: &AudioBuffer) -> Result<OnsetAnnotation> {
        let features = self.featurize(audio)?;
        let act = self.activations(&features)?;
        onsets_from_activations(&act, &self.classes(), &self.peak)
    }
}
