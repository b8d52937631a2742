//! 2-D cross-correlation over `[time, freq, channel]` feature maps.
//!
//! Kernels are laid out `[kt, kf, in_ch, out_ch]` so the innermost loops run
//! over contiguous output channels. Stride is always 1; zero padding is set
//! independently per axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform, Param, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub time: usize,
    pub freq: usize,
}

impl Padding {
    pub const VALID: Padding = Padding { time: 0, freq: 0 };

    /// Output keeps the input size along both axes (odd kernels).
    pub fn same(kt: usize, kf: usize) -> Self {
        Padding {
            time: kt / 2,
            freq: kf / 2,
        }
    }
}

struct Geometry {
    it: usize,
    if_: usize,
    ic: usize,
    kt: usize,
    kf: usize,
    oc: usize,
    ot: usize,
    of: usize,
    pt: usize,
    pf: usize,
}

fn geometry<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, pad: Padding) -> Result<Geometry> {
    let (&[it, if_, ic], &[kt, kf, kic, oc]) = (input.shape(), kernel.shape()) else {
        return Err(Error::Shape(format!(
            "conv2d expects input [t,f,c] and kernel [kt,kf,ic,oc], got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    };
    if kic != ic {
        return Err(Error::Shape(format!("kernel has {kic} input channels, input has {ic}")));
    }
    let (pt, pf) = (pad.time, pad.freq);
    if kt == 0 || kf == 0 || kt > it + 2 * pt || kf > if_ + 2 * pf {
        return Err(Error::Shape(format!(
            "kernel {kt}x{kf} larger than padded input {}x{}",
            it + 2 * pt,
            if_ + 2 * pf
        )));
    }
    Ok(Geometry {
        it,
        if_,
        ic,
        kt,
        kf,
        oc,
        ot: it + 2 * pt - kt + 1,
        of: if_ + 2 * pf - kf + 1,
        pt,
        pf,
    })
}

pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, pad: Padding) -> Result<Tensor<T>> {
    let g = geometry(input, kernel, pad)?;
    if bias.len() != g.oc {
        return Err(Error::Shape(format!("bias has {} entries, expected {}", bias.len(), g.oc)));
    }
    let x = input.data();
    let k = kernel.data();
    let mut y = vec![T::zero(); g.ot * g.of * g.oc];
    for t in 0..g.ot {
        for f in 0..g.of {
            let out = &mut y[(t * g.of + f) * g.oc..(t * g.of + f + 1) * g.oc];
            out.copy_from_slice(bias.data());
            for dt in 0..g.kt {
                let Some(xt) = (t + dt).checked_sub(g.pt).filter(|&v| v < g.it) else {
                    continue;
                };
                for df in 0..g.kf {
                    let Some(xf) = (f + df).checked_sub(g.pf).filter(|&v| v < g.if_) else {
                        continue;
                    };
                    let xin = &x[(xt * g.if_ + xf) * g.ic..(xt * g.if_ + xf + 1) * g.ic];
                    let kbase = (dt * g.kf + df) * g.ic * g.oc;
                    for (i, &xv) in xin.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let krow = &k[kbase + i * g.oc..kbase + (i + 1) * g.oc];
                        for (o, &kv) in out.iter_mut().zip(krow) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.ot, g.of, g.oc], y)
}

/// Accumulates gradients into the provided buffers. `grad_input` may be
/// skipped when the input is not itself trainable.
fn conv2d_backward_into<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    pad: Padding,
    mut grad_input: Option<&mut [T]>,
    grad_kernel: &mut [T],
    grad_bias: &mut [T],
) -> Result<()> {
    let g = geometry(input, kernel, pad)?;
    if grad_out.shape() != [g.ot, g.of, g.oc] {
        return Err(Error::Shape(format!(
            "conv2d grad_out {:?} != output shape {:?}",
            grad_out.shape(),
            [g.ot, g.of, g.oc]
        )));
    }
    let x = input.data();
    let k = kernel.data();
    let gy = grad_out.data();
    for t in 0..g.ot {
        for f in 0..g.of {
            let go = &gy[(t * g.of + f) * g.oc..(t * g.of + f + 1) * g.oc];
            for (b, &v) in grad_bias.iter_mut().zip(go) {
                *b += v;
            }
            for dt in 0..g.kt {
                let Some(xt) = (t + dt).checked_sub(g.pt).filter(|&v| v < g.it) else {
                    continue;
                };
                for df in 0..g.kf {
                    let Some(xf) = (f + df).checked_sub(g.pf).filter(|&v| v < g.if_) else {
                        continue;
                    };
                    let xbase = (xt * g.if_ + xf) * g.ic;
                    let kbase = (dt * g.kf + df) * g.ic * g.oc;
                    for i in 0..g.ic {
                        let xv = x[xbase + i];
                        let krange = kbase + i * g.oc..kbase + (i + 1) * g.oc;
                        if xv != T::zero() {
                            for (gk, &v) in grad_kernel[krange.clone()].iter_mut().zip(go) {
                                *gk += xv * v;
                            }
                        }
                        if let Some(gx) = grad_input.as_deref_mut() {
                            let mut acc = T::zero();
                            for (&kv, &v) in k[krange].iter().zip(go) {
                                acc += kv * v;
                            }
                            gx[xbase + i] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Returns `(grad_input, grad_kernel, grad_bias)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    pad: Padding,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mut gx = Tensor::zeros(input.shape());
    let mut gk = Tensor::zeros(kernel.shape());
    let mut gb = Tensor::zeros(&[kernel.shape()[3]]);
    conv2d_backward_into(
        input,
        kernel,
        grad_out,
        pad,
        Some(gx.data_mut()),
        gk.data_mut(),
        gb.data_mut(),
    )?;
    Ok((gx, gk, gb))
}

pub struct Conv2d<T> {
    pub kernel: Param<T>,
    pub bias: Param<T>,
    pub padding: Padding,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    /// He-uniform initialised kernel, zero bias.
    pub fn new<R: Rng>(
        name: &str,
        kt: usize,
        kf: usize,
        in_ch: usize,
        out_ch: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let fan_in = kt * kf * in_ch;
        let limit = (6.0 / fan_in as f64).sqrt();
        let kernel = Tensor::new(vec![kt, kf, in_ch, out_ch], uniform(rng, fan_in * out_ch, limit)).unwrap();
        Self {
            kernel: Param::new(format!("{name}.kernel"), kernel),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            padding,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.shape()[3]
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let y = conv2d(&x, &self.kernel.value, &self.bias.value, self.padding)?;
        self.input = Some(x);
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>, want_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Shape("conv2d backward before forward".into()))?;
        let mut gx = want_input_grad.then(|| Tensor::zeros(x.shape()));
        conv2d_backward_into(
            x,
            &self.kernel.value,
            gy,
            self.padding,
            gx.as_mut().map(|t| t.data_mut()),
            self.kernel.grad.data_mut(),
            self.bias.grad.data_mut(),
        )?;
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.kernel, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.kernel, &self.bias]
    }
}
