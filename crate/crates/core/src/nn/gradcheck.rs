//! Finite-difference verification of analytic gradients.

use super::Param;
use crate::error::Result;

/// Denominator floor of the relative error, so parameters whose true
/// gradient is ~0 are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// A scalar loss over `f64` parameters that can also fill their gradients.
pub trait Differentiable {
    type Input: ?Sized;
    type Target: ?Sized;

    /// Loss at the current parameters. With `backward` the parameter
    /// gradients are zeroed and then set to the gradient of this loss.
    fn loss(&mut self, input: &Self::Input, targets: &Self::Target, backward: bool) -> Result<f64>;

    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between analytic gradients and central differences
/// `(f(θ+h) - f(θ-h)) / 2h` over every scalar parameter.
pub fn grad_check<N: Differentiable>(net: &mut N, input: &N::Input, targets: &N::Target, h: f64) -> Result<f64> {
    net.loss(input, targets, true)?;
    let analytic: Vec<Vec<f64>> = net.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = net.params_mut()[pi].value.data()[k];
            net.params_mut()[pi].value.data_mut()[k] = orig + h;
            let up = net.loss(input, targets, false)?;
            net.params_mut()[pi].value.data_mut()[k] = orig - h;
            let down = net.loss(input, targets, false)?;
            net.params_mut()[pi].value.data_mut()[k] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}
