//! Adam optimiser with bias correction.

use super::{Param, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moments for a fixed list of parameters, matched by position.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update using the gradients stored in `params`. Moments are
    /// allocated on the first call.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len()) {
            return Err(Error::Shape("adam state does not match parameter list".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let upd = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *w = T::lit(w.f64() - upd);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn param(v: &[f64]) -> Param<f64> {
        Param::new("p", Tensor::new(vec![v.len()], v.to_vec()).unwrap())
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = param(&[1.0, -2.0, 3.5]);
        let before = p.value.clone();
        let mut st = AdamState::new(AdamConfig::default());
        for _ in 0..20 {
            st.step(&mut [&mut p]).unwrap();
            assert_eq!(p.value, before);
        }
        assert_eq!(st.steps(), 20);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param(&[1.0, 1.0]);
        p.grad = Tensor::new(vec![2], vec![3.0, -0.25]).unwrap();
        let mut st = AdamState::new(AdamConfig::with_lr(0.01));
        st.step(&mut [&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.99).abs() < 1e-8);
        assert!((p.value.data()[1] - 1.01).abs() < 1e-8);
    }

    #[test]
    fn descends_parabola() {
        let mut p = param(&[5.0]);
        let mut st = AdamState::new(AdamConfig::with_lr(0.1));
        for _ in 0..200 {
            let x = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * x;
            st.step(&mut [&mut p]).unwrap();
        }
        assert!(p.value.data()[0].abs() < 0.5);
    }

    #[test]
    fn mismatched_params_error() {
        let mut a = param(&[1.0]);
        let mut b = param(&[1.0, 2.0]);
        let mut st = AdamState::new(AdamConfig::default());
        st.step(&mut [&mut a]).unwrap();
        assert!(st.step(&mut [&mut b]).is_err());
    }
}
