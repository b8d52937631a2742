//! Cross-validated experiments over a built dataset.
//!
//! Layout of an experiment directory:
//!
//! ```text
//! fold{k}/history.csv       per-epoch losses and learning rates
//! fold{k}/model.dsck        best checkpoint with the selected threshold
//! fold{k}/thresholds.csv    validation sum F-measure per grid value
//! fold{k}/predictions/*.txt onsets of the held-out tracks
//! fold{k}/report/           per-fold evaluation report
//! report/                   report pooled over all held-out tracks
//! cv_summary.csv            one row per fold plus the fold average
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::OnsetAnnotation;
use crate::audio::read_wav;
use crate::datafactory::manifest::{DatasetManifest, Fold, TrackRecord};
use crate::datafactory::MANIFEST_FILE;
use crate::dsp::{FeatureConfig, FeatureExtractor, FeatureMatrix};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate_track, EvalReport, DEFAULT_TOLERANCE};
use crate::model::train::{default_threshold_grid, select_threshold, train};
use crate::model::{targets_from_annotations, NetworkSpec, TrackData, TrainConfig, TrainHistory, TrainedModel};
use crate::peakpick::{onsets_from_activations, PeakParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    /// Peak-picking windows; the threshold is chosen from `threshold_grid`.
    pub peak: PeakParams,
    pub threshold_grid: Vec<f64>,
    pub tolerance: f64,
    /// Folds to run; all when absent.
    pub folds: Option<Vec<usize>>,
    pub features: FeatureConfig,
    /// Compute missing cached features instead of failing.
    pub auto_featurize: bool,
}

impl ExperimentConfig {
    pub fn new(spec: NetworkSpec) -> Self {
        Self {
            train: TrainConfig::for_kind(spec.kind),
            spec,
            peak: PeakParams::default(),
            threshold_grid: default_threshold_grid(),
            tolerance: DEFAULT_TOLERANCE,
            folds: None,
            features: FeatureConfig::default(),
            auto_featurize: true,
        }
    }
}

fn feature_path(dataset: &Path, cfg: &FeatureConfig, id: &str) -> PathBuf {
    dataset.join("features").join(cfg.hash_hex()).join(format!("{id}.dsfm"))
}

/// Features of a track, computed once and cached under
/// `features/<config hash>/` in the dataset directory.
pub fn track_features(dataset: &Path, track: &TrackRecord, cfg: &FeatureConfig, fx: &FeatureExtractor) -> Result<FeatureMatrix> {
    let path = feature_path(dataset, cfg, &track.id);
    if path.exists() {
        return FeatureMatrix::read(&path);
    }
    let audio = read_wav(&dataset.join(&track.audio_path))?;
    let f = fx.extract(&audio).map_err(|e| Error::file(&track.audio_path, e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    f.write(&path)?;
    Ok(f)
}

/// Featurises every track of the manifest (in parallel).
pub fn featurize_dataset(dataset: &Path, manifest: &DatasetManifest, cfg: &FeatureConfig) -> Result<()> {
    let fx = FeatureExtractor::new(cfg.clone())?;
    manifest
        .tracks
        .par_iter()
        .try_for_each(|t| track_features(dataset, t, cfg, &fx).map(|_| ()))
}

/// Features and frame targets of the given tracks.
pub fn load_tracks(
    dataset: &Path,
    manifest: &DatasetManifest,
    ids: &[String],
    cfg: &FeatureConfig,
    widen: bool,
) -> Result<Vec<TrackData>> {
    let fx = FeatureExtractor::new(cfg.clone())?;
    let classes = manifest.schema.classes();
    ids.par_iter()
        .map(|id| {
            let t = manifest
                .track(id)
                .ok_or_else(|| Error::Config(format!("track {id} is not in the manifest")))?;
            let features = track_features(dataset, t, cfg, &fx)?;
            let ann = OnsetAnnotation::read(&dataset.join(&t.annotation_path))?;
            let targets = targets_from_annotations(&ann, features.n_frames, features.fps, &classes, widen)?;
            Ok(TrackData { name: id.clone(), features, targets })
        })
        .collect()
}

fn references(dataset: &Path, manifest: &DatasetManifest, ids: &[String]) -> Result<Vec<OnsetAnnotation>> {
    ids.iter()
        .map(|id| {
            let t = manifest.track(id).expect("ids come from the manifest");
            OnsetAnnotation::read(&dataset.join(&t.annotation_path))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub threshold: f64,
    pub threshold_scores: Vec<f64>,
    pub history: TrainHistory,
    pub report: EvalReport,
}

/// Trains on the fold's training tracks, picks the threshold on its
/// validation tracks and evaluates the held-out split.
pub fn run_fold(dataset: &Path, manifest: &DatasetManifest, fold: &Fold, cfg: &ExperimentConfig, out: &Path) -> Result<FoldResult> {
    let k = fold.test_split;
    std::fs::create_dir_all(out.join("predictions")).map_err(Error::io(out))?;
    let classes = manifest.schema.classes();
    if cfg.spec.n_classes != classes.len() {
        return Err(Error::Config(format!(
            "model has {} outputs, schema {} has {} classes",
            cfg.spec.n_classes,
            manifest.schema,
            classes.len()
        )));
    }
    let widen = cfg.train.widen_targets;
    let train_set = load_tracks(dataset, manifest, &fold.train, &cfg.features, widen)?;
    let val_set = load_tracks(dataset, manifest, &fold.validation, &cfg.features, widen)?;
    log::info!("fold {k}: {} training, {} validation, {} test tracks", train_set.len(), val_set.len(), fold.test.len());
    let (mut net, history) = train(cfg.spec.clone(), &train_set, &val_set, &cfg.train)?;
    history.write_csv(&out.join("history.csv"))?;

    let val_refs = references(dataset, manifest, &fold.validation)?;
    let mut val_pairs = Vec::with_capacity(val_set.len());
    for (t, r) in val_set.iter().zip(val_refs) {
        val_pairs.push((net.predict(&t.features)?, r));
    }
    let (threshold, threshold_scores) = select_threshold(&val_pairs, &classes, &cfg.peak, &cfg.threshold_grid, cfg.tolerance)?;
    let mut s = String::from("threshold,sum_f\n");
    for (d, f) in cfg.threshold_grid.iter().zip(&threshold_scores) {
        let _ = writeln!(s, "{d},{f}");
    }
    std::fs::write(out.join("thresholds.csv"), s).map_err(Error::io(out))?;

    let peak = PeakParams { delta: threshold, ..cfg.peak.clone() };
    let model = TrainedModel {
        net,
        schema: manifest.schema,
        feature_config: cfg.features.clone(),
        peak: peak.clone(),
    };
    model.save(&out.join("model.dsck"))?;
    let mut net = model.net;

    let test_set = load_tracks(dataset, manifest, &fold.test, &cfg.features, false)?;
    let test_refs = references(dataset, manifest, &fold.test)?;
    let mut evals = Vec::with_capacity(test_set.len());
    for (t, refs) in test_set.iter().zip(&test_refs) {
        let dets = onsets_from_activations(&net.predict(&t.features)?, &classes, &peak)?;
        dets.write(&out.join("predictions").join(format!("{}.txt", t.name)))?;
        evals.push(evaluate_track(&t.name, &dets, refs, &classes, cfg.tolerance, cfg.tolerance));
    }
    let report = EvalReport::new(&classes, cfg.tolerance, evals);
    emit_report(&report, &out.join("report"))?;
    Ok(FoldResult { fold: k, threshold, threshold_scores, history, report })
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    /// Report over the held-out tracks of all folds.
    pub pooled: EvalReport,
}

impl CvResult {
    /// Sum F-measure averaged over folds.
    pub fn mean_fold_sum_f(&self) -> f64 {
        let v: Vec<f64> = self.folds.iter().map(|f| f.report.sum_f().unwrap_or(0.0)).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn mean_fold_mean_f(&self) -> f64 {
        let v: Vec<f64> = self.folds.iter().map(|f| f.report.mean_f().unwrap_or(0.0)).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("fold,threshold,epochs,best_epoch,mean_f,sum_f\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6}",
                f.fold,
                f.threshold,
                f.history.epochs.len(),
                f.history.best_epoch().map_or(0, |e| e.epoch),
                f.report.mean_f().unwrap_or(0.0),
                f.report.sum_f().unwrap_or(0.0)
            );
        }
        let _ = writeln!(s, "average,,,,{:.6},{:.6}", self.mean_fold_mean_f(), self.mean_fold_sum_f());
        s
    }
}

/// Runs the configured folds of a split dataset and writes all reports
/// under `out`.
pub fn run_cross_validation(dataset: &Path, out: &Path, cfg: &ExperimentConfig) -> Result<CvResult> {
    let manifest = DatasetManifest::read(&dataset.join(MANIFEST_FILE))?;
    if manifest.folds.is_empty() {
        return Err(Error::Config(format!("{} has no folds; split the dataset first", dataset.display())));
    }
    let selected: Vec<&Fold> = match &cfg.folds {
        None => manifest.folds.iter().collect(),
        Some(ks) => ks
            .iter()
            .map(|&k| {
                manifest
                    .folds
                    .iter()
                    .find(|f| f.test_split == k)
                    .ok_or_else(|| Error::Config(format!("fold {k} does not exist")))
            })
            .collect::<Result<_>>()?,
    };
    if cfg.auto_featurize {
        featurize_dataset(dataset, &manifest, &cfg.features)?;
    } else {
        let missing: Vec<&str> = manifest
            .tracks
            .iter()
            .filter(|t| !feature_path(dataset, &cfg.features, &t.id).exists())
            .map(|t| t.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing cached features for: {}", missing.join(", "))));
        }
    }
    let mut folds = Vec::new();
    for fold in selected {
        folds.push(run_fold(dataset, &manifest, fold, cfg, &out.join(format!("fold{}", fold.test_split)))?);
    }
    let pooled = EvalReport::new(
        &manifest.schema.classes(),
        cfg.tolerance,
        folds.iter().flat_map(|f| f.report.tracks.clone()).collect(),
    );
    emit_report(&pooled, &out.join("report"))?;
    let result = CvResult { folds, pooled };
    let path = out.join("cv_summary.csv");
    std::fs::write(&path, result.summary_csv()).map_err(Error::io(&path))?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datafactory::{build_dataset, split_dataset, write_toy_corpus, BuildConfig, SchemaName, ToyStyle};
    use crate::model::desk_crnn;

    #[test]
    fn feature_cache_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_toy_corpus(&dir.path().join("c"), 1, &ToyStyle::default(), 0).unwrap();
        let ds = dir.path().join("ds");
        let m = build_dataset(&paths, &ds, &BuildConfig::new(SchemaName::Three)).unwrap();
        let cfg = FeatureConfig::default();
        featurize_dataset(&ds, &m, &cfg).unwrap();
        let p = feature_path(&ds, &cfg, &m.tracks[0].id);
        let f = FeatureMatrix::read(&p).unwrap();
        assert_eq!(f.width, 168);
        assert_eq!(f.n_frames, (m.tracks[0].duration_s * 44100.0).round().div_euclid(441.0) as usize + usize::from(((m.tracks[0].duration_s * 44100.0).round() as usize) % 441 != 0));
        let tracks = load_tracks(&ds, &m, &[m.tracks[0].id.clone()], &cfg, false).unwrap();
        assert_eq!(tracks[0].features, f);
        assert!(tracks[0].targets.data().iter().sum::<f32>() > 10.0);
    }

    #[test]
    fn one_fold_smoke_run() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_toy_corpus(&dir.path().join("c"), 6, &ToyStyle { min_duration_s: 30.0, ..Default::default() }, 1).unwrap();
        let ds = dir.path().join("ds");
        build_dataset(&paths, &ds, &BuildConfig::new(SchemaName::Three)).unwrap();
        split_dataset(&ds, &crate::datafactory::default_soundfont_groups(), 0.25, 0).unwrap();
        let mut cfg = ExperimentConfig::new(desk_crnn(3));
        cfg.train.max_epochs = 1;
        cfg.folds = Some(vec![1]);
        let out = dir.path().join("exp");
        let r = run_cross_validation(&ds, &out, &cfg).unwrap();
        assert_eq!(r.folds.len(), 1);
        for f in ["fold1/history.csv", "fold1/model.dsck", "fold1/thresholds.csv", "fold1/report/summary.csv", "report/per_class.csv", "cv_summary.csv"] {
            assert!(out.join(f).exists(), "{f}");
        }
        let model = TrainedModel::load(&out.join("fold1/model.dsck")).unwrap();
        assert_eq!(model.peak.delta, r.folds[0].threshold);
        cfg.folds = Some(vec![7]);
        assert!(run_cross_validation(&ds, &out, &cfg).is_err());
        std::fs::remove_dir_all(ds.join("features")).unwrap();
        cfg.folds = Some(vec![1]);
        cfg.auto_featurize = false;
        let err = run_cross_validation(&ds, &out, &cfg).unwrap_err().to_string();
        assert!(err.contains("missing cached features"), "{err}");
    }
}
