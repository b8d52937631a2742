//! Parameter-free layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn before_forward() -> Error {
    Error::Shape("backward called before forward".into())
}

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward<T: Real>(&mut self, mut x: Tensor<T>) -> Tensor<T> {
        self.mask.clear();
        for v in x.data_mut() {
            let on = *v > T::zero();
            self.mask.push(on);
            if !on {
                *v = T::zero();
            }
        }
        x
    }

    pub fn backward<T: Real>(&self, mut gy: Tensor<T>) -> Result<Tensor<T>> {
        if gy.len() != self.mask.len() {
            return Err(before_forward());
        }
        for (g, &on) in gy.data_mut().iter_mut().zip(&self.mask) {
            if !on {
                *g = T::zero();
            }
        }
        Ok(gy)
    }
}

/// Non-overlapping max pooling along the frequency axis of a `[t, f, c]` map.
/// Trailing frequency bins that do not fill a window are dropped.
pub struct MaxPoolFreq {
    pub size: usize,
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPoolFreq {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            input_shape: Vec::new(),
            argmax: Vec::new(),
        }
    }

    pub fn output_bins(&self, in_bins: usize) -> usize {
        in_bins / self.size
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let &[t, f, c] = x.shape() else {
            return Err(Error::Shape(format!("pool expects [t,f,c], got {:?}", x.shape())));
        };
        let of = f / self.size;
        if of == 0 {
            return Err(Error::Shape(format!("pool size {} exceeds {f} bins", self.size)));
        }
        let d = x.data();
        let mut out = Vec::with_capacity(t * of * c);
        self.argmax.clear();
        for ti in 0..t {
            for fo in 0..of {
                for ch in 0..c {
                    let mut best = (ti * f + fo * self.size) * c + ch;
                    for j in 1..self.size {
                        let idx = (ti * f + fo * self.size + j) * c + ch;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    self.argmax.push(best);
                }
            }
        }
        self.input_shape = x.shape().to_vec();
        Tensor::new(vec![t, of, c], out)
    }

    pub fn backward<T: Real>(&self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        if gy.len() != self.argmax.len() {
            return Err(before_forward());
        }
        let mut gx = Tensor::zeros(&self.input_shape);
        let g = gx.data_mut();
        for (&idx, &v) in self.argmax.iter().zip(gy.data()) {
            g[idx] += v;
        }
        Ok(gx)
    }
}

/// Inverted dropout with its own seeded generator; identity when not training.
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }

    pub fn forward<T: Real>(&mut self, mut x: Tensor<T>, training: bool) -> Tensor<T> {
        if !training || self.rate <= 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
            *v *= T::lit(m);
        }
        self.mask = Some(mask);
        x
    }

    pub fn backward<T: Real>(&self, mut gy: Tensor<T>) -> Tensor<T> {
        if let Some(mask) = &self.mask {
            for (g, &m) in gy.data_mut().iter_mut().zip(mask) {
                *g *= T::lit(m);
            }
        }
        gy
    }
}

/// Gathers `window` consecutive frames of a `[t', f, c]` map into one row per
/// output step: `[t' - window + 1, window * f * c]`.
pub struct Unfold {
    pub window: usize,
    input_shape: Vec<usize>,
}

impl Unfold {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            input_shape: Vec::new(),
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let &[t, f, c] = x.shape() else {
            return Err(Error::Shape(format!("unfold expects [t,f,c], got {:?}", x.shape())));
        };
        if t < self.window {
            return Err(Error::Shape(format!("unfold window {} exceeds {t} frames", self.window)));
        }
        let steps = t - self.window + 1;
        let fc = f * c;
        let row = self.window * fc;
        let mut out = Vec::with_capacity(steps * row);
        for s in 0..steps {
            out.extend_from_slice(&x.data()[s * fc..s * fc + row]);
        }
        self.input_shape = x.shape().to_vec();
        Tensor::new(vec![steps, row], out)
    }

    pub fn backward<T: Real>(&self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        if self.input_shape.is_empty() {
            return Err(before_forward());
        }
        let (f, c) = (self.input_shape[1], self.input_shape[2]);
        let fc = f * c;
        let row = self.window * fc;
        let mut gx = Tensor::zeros(&self.input_shape);
        let g = gx.data_mut();
        for (s, grow) in gy.data().chunks_exact(row).enumerate() {
            for (a, &b) in g[s * fc..s * fc + row].iter_mut().zip(grow) {
                *a += b;
            }
        }
        Ok(gx)
    }
}
