//! Class-weighted binary cross-entropy.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Per-class weights applied to the positive term of the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pos_weights: Vec<f64>,
}

impl LossConfig {
    pub fn new(pos_weights: Vec<f64>) -> Result<Self> {
        if pos_weights.is_empty() {
            return Err(Error::Config("loss weights must not be empty".into()));
        }
        if let Some(w) = pos_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("loss weight {w} is not positive")));
        }
        Ok(Self { pos_weights })
    }

    /// All-ones weights, i.e. plain BCE.
    pub fn unweighted(n_classes: usize) -> Self {
        Self {
            pos_weights: vec![1.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.pos_weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.pos_weights
    }
}

fn check_shapes<T: Real>(p: &Tensor<T>, y: &Tensor<T>, cfg: &LossConfig) -> Result<usize> {
    if p.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            p.shape(),
            y.shape()
        )));
    }
    let c = *p.shape().last().unwrap_or(&0);
    if c != cfg.n_classes() {
        return Err(Error::Shape(format!(
            "last axis {c} != {} loss weights",
            cfg.n_classes()
        )));
    }
    Ok(c)
}

fn element_loss(p: f64, y: f64, w: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(w * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean weighted BCE over all elements of `[.., C]` tensors, and its gradient
/// with respect to the predictions. The gradient is zero where the clamp is
/// active.
pub fn weighted_bce<T: Real>(pred: &Tensor<T>, targets: &Tensor<T>, cfg: &LossConfig) -> Result<(T, Tensor<T>)> {
    let c = check_shapes(pred, targets, cfg)?;
    let n = pred.len();
    if n == 0 {
        return Ok((T::zero(), Tensor::zeros(pred.shape())));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (i, (&p, &y)) in pred.data().iter().zip(targets.data()).enumerate() {
        let (p, y, w) = (p.f64(), y.f64(), cfg.pos_weights[i % c]);
        total += element_loss(p, y, w);
        let g = if (EPS..=1.0 - EPS).contains(&p) {
            -w * y / p + (1.0 - y) / (1.0 - p)
        } else {
            0.0
        };
        grad.push(T::lit(g * inv_n));
    }
    Ok((T::lit(total * inv_n), Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Weighted BCE for sigmoid outputs, with the gradient taken with respect to
/// the pre-sigmoid logits: `((1 - y) p - w y (1 - p)) / n`. Rows whose `mask`
/// entry is false are excluded from both the loss and the normaliser `n`.
/// Unlike [`weighted_bce`] the gradient does not vanish in the clamped region.
pub fn weighted_bce_logits<T: Real>(
    probs: &Tensor<T>,
    targets: &Tensor<T>,
    mask: Option<&[bool]>,
    cfg: &LossConfig,
) -> Result<(f64, Tensor<T>, usize)> {
    let c = check_shapes(probs, targets, cfg)?;
    let rows = if c == 0 { 0 } else { probs.len() / c };
    if let Some(m) = mask {
        if m.len() != rows {
            return Err(Error::Shape(format!("mask length {} != {rows} rows", m.len())));
        }
    }
    let active = |r: usize| mask.map_or(true, |m| m[r]);
    let n = (0..rows).filter(|&r| active(r)).count() * c;
    let mut grad = Tensor::zeros(probs.shape());
    if n == 0 {
        return Ok((0.0, grad, 0));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let (p_all, y_all) = (probs.data(), targets.data());
    let g_all = grad.data_mut();
    for r in (0..rows).filter(|&r| active(r)) {
        for k in r * c..(r + 1) * c {
            let (p, y, w) = (p_all[k].f64(), y_all[k].f64(), cfg.pos_weights[k - r * c]);
            total += element_loss(p, y, w);
            g_all[k] = T::lit(((1.0 - y) * p - w * y * (1.0 - p)) * inv_n);
        }
    }
    Ok((total * inv_n, grad, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let y = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let (l, _) = weighted_bce(&y, &y, &LossConfig::unweighted(2)).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn unit_weights_equal_plain_bce() {
        let p = t(&[2, 3], &[0.2, 0.9, 0.5, 0.6, 0.01, 0.7]);
        let y = t(&[2, 3], &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let (l, _) = weighted_bce(&p, &y, &LossConfig::unweighted(3)).unwrap();
        let plain: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            .sum::<f64>()
            * (1.0 / 6.0);
        assert_eq!(l, plain);
    }

    #[test]
    fn weighted_single_element() {
        let p = t(&[1, 1], &[0.5]);
        let y = t(&[1, 1], &[1.0]);
        let cfg = LossConfig::new(vec![2.0]).unwrap();
        let (l, g) = weighted_bce(&p, &y, &cfg).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        let h = 1e-5;
        let f = |v: f64| weighted_bce(&t(&[1, 1], &[v]), &y, &cfg).unwrap().0;
        let fd = (f(0.5 + h) - f(0.5 - h)) / (2.0 * h);
        assert!((g.data()[0] - fd).abs() / fd.abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = t(&[2, 2], &[0.3, 0.8, 0.45, 0.1]);
        let y = t(&[2, 2], &[1.0, 0.0, 1.0, 0.0]);
        let cfg = LossConfig::new(vec![3.0, 0.5]).unwrap();
        let (_, g) = weighted_bce(&p, &y, &cfg).unwrap();
        let h = 1e-5;
        for i in 0..4 {
            let mut a = p.clone();
            let mut b = p.clone();
            a.data_mut()[i] += h;
            b.data_mut()[i] -= h;
            let fd = (weighted_bce(&a, &y, &cfg).unwrap().0 - weighted_bce(&b, &y, &cfg).unwrap().0) / (2.0 * h);
            assert!((g.data()[i] - fd).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn clamped_extremes_are_finite() {
        let p = t(&[1, 2], &[0.0, 1.0]);
        let y = t(&[1, 2], &[1.0, 0.0]);
        let (l, g) = weighted_bce(&p, &y, &LossConfig::unweighted(2)).unwrap();
        assert!(l.is_finite() && l > 10.0);
        assert!(g.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn logit_gradient_is_chain_rule_of_prob_gradient() {
        let z = [0.3, -1.2, 2.0, 0.1];
        let p = t(&[2, 2], &z.map(|v: f64| 1.0 / (1.0 + (-v).exp())));
        let y = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let cfg = LossConfig::new(vec![2.0, 1.5]).unwrap();
        let (l1, gp) = weighted_bce(&p, &y, &cfg).unwrap();
        let (l2, gz, n) = weighted_bce_logits(&p, &y, None, &cfg).unwrap();
        assert_eq!(n, 4);
        assert!((l1 - l2).abs() < 1e-12);
        for i in 0..4 {
            let pi = p.data()[i];
            assert!((gp.data()[i] * pi * (1.0 - pi) - gz.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_rows_contribute_nothing() {
        let p = t(&[3, 2], &[0.3, 0.6, 0.2, 0.9, 0.7, 0.4]);
        let y = t(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let cfg = LossConfig::unweighted(2);
        let (full, _, _) = weighted_bce_logits(&t(&[2, 2], &p.data()[..4]), &t(&[2, 2], &y.data()[..4]), None, &cfg).unwrap();
        let (masked, g, n) = weighted_bce_logits(&p, &y, Some(&[true, true, false]), &cfg).unwrap();
        assert_eq!(n, 4);
        assert_eq!(full, masked);
        assert_eq!(&g.data()[4..], &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        assert!(LossConfig::new(vec![1.0, 0.0]).is_err());
        assert!(LossConfig::new(vec![]).is_err());
        let a = t(&[1, 2], &[0.5, 0.5]);
        let b = t(&[2, 1], &[0.5, 0.5]);
        assert!(weighted_bce(&a, &b, &LossConfig::unweighted(2)).is_err());
        assert!(weighted_bce(&a, &a, &LossConfig::unweighted(3)).is_err());
    }
}
