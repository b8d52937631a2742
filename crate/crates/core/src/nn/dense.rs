use rand::Rng;

use super::{uniform, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer applied row-wise to an `[n, in]` matrix.
///
/// The weight is stored `[in, out]`, i.e. the transpose of the usual `W x`
/// convention, so the forward pass is a sequence of contiguous AXPYs.
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng>(name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = Tensor::new(vec![n_in, n_out], uniform(rng, n_in * n_out, limit)).unwrap();
        Self {
            weight: Param::new(format!("{name}.weight"), w),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[n_out])),
            input: None,
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let y = matmul_rows(&x, &self.weight.value, Some(&self.bias.value))?;
        self.input = Some(x);
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>, want_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Shape("dense backward before forward".into()))?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let rows = x.shape()[0];
        if gy.shape() != [rows, n_out] {
            return Err(Error::Shape(format!("dense grad {:?} != [{rows}, {n_out}]", gy.shape())));
        }
        let w = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        let gb = self.bias.grad.data_mut();
        let mut gx = want_input_grad.then(|| Tensor::zeros(x.shape()));
        for r in 0..rows {
            let xr = &x.data()[r * n_in..(r + 1) * n_in];
            let gr = &gy.data()[r * n_out..(r + 1) * n_out];
            for (b, &g) in gb.iter_mut().zip(gr) {
                *b += g;
            }
            for (i, &xv) in xr.iter().enumerate() {
                if xv != T::zero() {
                    for (a, &g) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(gr) {
                        *a += xv * g;
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                let gxr = &mut gx.data_mut()[r * n_in..(r + 1) * n_in];
                for (i, slot) in gxr.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for (&wv, &g) in w[i * n_out..(i + 1) * n_out].iter().zip(gr) {
                        acc += wv * g;
                    }
                    *slot = acc;
                }
            }
        }
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
}

/// `x [n, in] · w [in, out] (+ bias)`.
pub(crate) fn matmul_rows<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (&[rows, n_in], &[w_in, n_out]) = (x.shape(), w.shape()) else {
        return Err(Error::Shape(format!(
            "matmul expects 2-D operands, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    };
    if n_in != w_in {
        return Err(Error::Shape(format!("matmul inner dims {n_in} != {w_in}")));
    }
    let mut y = vec![T::zero(); rows * n_out];
    for r in 0..rows {
        let out = &mut y[r * n_out..(r + 1) * n_out];
        if let Some(b) = bias {
            out.copy_from_slice(b.data());
        }
        for (i, &xv) in x.data()[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in out.iter_mut().zip(&w.data()[i * n_out..(i + 1) * n_out]) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![rows, n_out], y)
}
