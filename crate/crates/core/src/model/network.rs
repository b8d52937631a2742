//! CNN/CRNN graphs assembled from the `nn` layers.
//!
//! A segment of `T + context - 1` feature frames is convolved once (unpadded
//! along time), then unfolded so that row `t` holds the conv output of the
//! context window centred on frame `t`. The CNN head scores rows
//! independently; the CRNN head runs bidirectional GRUs over them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::data::segment_input;
use super::spec::{ModelKind, NetworkSpec};
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{sigmoid, BiGru, Conv2d, Dense, Dropout, MaxPoolFreq, Padding, Param, Real, Relu, Tensor, Unfold};
use crate::peakpick::ActivationMatrix;

/// Frames per forward pass when a CNN scores a whole track.
const CNN_CHUNK: usize = 256;

pub struct Network<T> {
    spec: NetworkSpec,
    convs: Vec<Conv2d<T>>,
    conv_relus: Vec<Relu>,
    pools: Vec<Option<MaxPoolFreq>>,
    dropout: Dropout,
    unfold: Unfold,
    dense: Vec<Dense<T>>,
    dense_relus: Vec<Relu>,
    grus: Vec<BiGru<T>>,
    out: Dense<T>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = spec.kernel;
        let pad = Padding { time: 0, freq: k / 2 };
        let mut convs = Vec::new();
        let mut pools = Vec::new();
        let mut in_ch = 1;
        for block in &spec.conv {
            for (j, &c) in block.channels.iter().enumerate() {
                convs.push(Conv2d::new(&format!("conv{}", convs.len()), k, k, in_ch, c, pad, &mut rng));
                pools.push((j + 1 == block.channels.len()).then(|| MaxPoolFreq::new(block.pool)));
                in_ch = c;
            }
        }
        let mut width = spec.head_input();
        let mut dense = Vec::new();
        let mut grus = Vec::new();
        match spec.kind {
            ModelKind::Cnn => {
                for (i, &d) in spec.dense.iter().enumerate() {
                    dense.push(Dense::new(&format!("dense{i}"), width, d, &mut rng));
                    width = d;
                }
            }
            ModelKind::Crnn => {
                for (i, &h) in spec.gru.iter().enumerate() {
                    grus.push(BiGru::new(&format!("gru{i}"), width, h, &mut rng));
                    width = 2 * h;
                }
            }
        }
        let out = Dense::new("out", width, spec.n_classes, &mut rng);
        Ok(Self {
            conv_relus: convs.iter().map(|_| Relu::default()).collect(),
            dense_relus: dense.iter().map(|_| Relu::default()).collect(),
            dropout: Dropout::new(spec.dropout, seed ^ 0x5EED_D80B),
            unfold: Unfold::new(spec.conv_window()),
            convs,
            pools,
            dense,
            grus,
            out,
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Output probabilities `[L - context + 1, n_classes]` for an input
    /// segment `[L, n_features, 1]`.
    pub fn forward(&mut self, x: Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let s = &self.spec;
        if x.shape().len() != 3 || x.shape()[1] != s.n_features || x.shape()[2] != 1 || x.shape()[0] < s.context {
            return Err(Error::Shape(format!(
                "network expects [>= {}, {}, 1], got {:?}",
                s.context,
                s.n_features,
                x.shape()
            )));
        }
        let mut h = x;
        for ((conv, relu), pool) in self.convs.iter_mut().zip(&mut self.conv_relus).zip(&mut self.pools) {
            h = relu.forward(conv.forward(h)?);
            if let Some(p) = pool {
                h = p.forward(&h)?;
            }
        }
        h = self.dropout.forward(h, training);
        h = self.unfold.forward(&h)?;
        for (d, relu) in self.dense.iter_mut().zip(&mut self.dense_relus) {
            h = relu.forward(d.forward(h)?);
        }
        for g in &mut self.grus {
            h = g.forward(h)?;
        }
        let mut y = self.out.forward(h)?;
        for v in y.data_mut() {
            *v = sigmoid(*v);
        }
        Ok(y)
    }

    /// Accumulates parameter gradients given the gradient of the loss with
    /// respect to the output logits.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let mut g = self.out.backward(grad_logits, true)?.expect("input grad requested");
        for gru in self.grus.iter_mut().rev() {
            g = gru.backward(&g, true)?.expect("input grad requested");
        }
        for (d, relu) in self.dense.iter_mut().zip(&self.dense_relus).rev() {
            g = relu.backward(g)?;
            g = d.backward(&g, true)?.expect("input grad requested");
        }
        g = self.unfold.backward(&g)?;
        g = self.dropout.backward(g);
        for i in (0..self.convs.len()).rev() {
            if let Some(p) = &self.pools[i] {
                g = p.backward(&g)?;
            }
            g = self.conv_relus[i].backward(g)?;
            match self.convs[i].backward(&g, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.dense.iter().flat_map(|d| d.params()));
        v.extend(self.grus.iter().flat_map(|g| g.params()));
        v.extend(self.out.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.dense.iter_mut().flat_map(|d| d.params_mut()));
        v.extend(self.grus.iter_mut().flat_map(|g| g.params_mut()));
        v.extend(self.out.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::Shape(format!("{} tensors for {} parameters", values.len(), params.len())));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Shape(format!("{}: {:?} vs {:?}", p.name, p.value.shape(), v.shape())));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Activations for a whole track (edges zero-padded).
    pub fn predict(&mut self, features: &FeatureMatrix) -> Result<ActivationMatrix> {
        let c = self.spec.n_classes;
        if features.width != self.spec.n_features {
            return Err(Error::Shape(format!(
                "features are {} wide, model expects {}",
                features.width, self.spec.n_features
            )));
        }
        let n = features.n_frames;
        let chunk = match self.spec.kind {
            ModelKind::Cnn => CNN_CHUNK,
            ModelKind::Crnn => n.max(1),
        };
        let mut values = Vec::with_capacity(n * c);
        let mut start = 0;
        while start < n {
            let len = chunk.min(n - start);
            let x = segment_input::<T>(features, start, len, self.spec.half_context());
            let y = self.forward(x, false)?;
            values.extend(y.data().iter().map(|v| v.f64().clamp(0.0, 1.0) as f32));
            start += len;
        }
        ActivationMatrix::new(n, c, features.fps, values)
    }

    /// Checkpoint holding the network layout plus `extra` header fields.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let mut header = json!({ "spec": self.spec });
        if let (Some(h), serde_json::Value::Object(e)) = (header.as_object_mut(), extra) {
            h.extend(e);
        }
        let mut ck = Checkpoint::new(header);
        for p in self.params() {
            ck.push(p.name.clone(), &p.value);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_value(ck.header.get("spec").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint(format!("bad network spec: {e}")))?;
        let mut net = Self::new(spec, 0)?;
        if ck.arrays.len() != net.params().len() {
            return Err(Error::Checkpoint(format!(
                "{} arrays for {} parameters",
                ck.arrays.len(),
                net.params().len()
            )));
        }
        for p in net.params_mut() {
            let t = ck
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(net)
    }
}
