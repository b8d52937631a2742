//! Gated recurrent units.
//!
//! Gate convention:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! ĥ  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ ĥ
//! ```
//!
//! Matrices are stored `[in, out]` (transposed relative to the formulas) so
//! `W_z x` is computed as the row vector `x · w_z`.

use rand::Rng;

use super::dense::matmul_rows;
use super::{sigmoid, uniform, Param, Real, Tensor};
use crate::error::{Error, Result};

/// The nine GRU parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<T> {
    pub w_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_z: Tensor<T>,
    pub u_r: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_z: Tensor<T>,
    pub b_r: Tensor<T>,
    pub b_h: Tensor<T>,
}

impl<T: Real> GruParams<T> {
    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        Self {
            w_z: Tensor::zeros(&[n_in, hidden]),
            w_r: Tensor::zeros(&[n_in, hidden]),
            w_h: Tensor::zeros(&[n_in, hidden]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_z.shape()[1]
    }
}

fn vec_mat<T: Real>(v: &[T], m: &[T], n_out: usize, out: &mut [T]) {
    for (i, &x) in v.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(&m[i * n_out..(i + 1) * n_out]) {
            *o += x * w;
        }
    }
}

/// `out[i] += Σ_o m[i, o] g[o]`
fn mat_vec_t<T: Real>(m: &[T], g: &[T], out: &mut [T]) {
    let n_out = g.len();
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = T::zero();
        for (&w, &gv) in m[i * n_out..(i + 1) * n_out].iter().zip(g) {
            acc += w * gv;
        }
        *slot += acc;
    }
}

fn outer_acc<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    let n = b.len();
    for (i, &av) in a.iter().enumerate() {
        if av == T::zero() {
            continue;
        }
        for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
            *o += av * bv;
        }
    }
}

/// One GRU step.
pub fn gru_cell<T: Real>(x: &[T], h_prev: &[T], p: &GruParams<T>) -> Result<Vec<T>> {
    let (n_in, hidden) = (p.n_in(), p.hidden());
    if x.len() != n_in || h_prev.len() != hidden {
        return Err(Error::Shape(format!(
            "gru cell expects x[{n_in}] and h[{hidden}], got x[{}] and h[{}]",
            x.len(),
            h_prev.len()
        )));
    }
    let mut az = p.b_z.data().to_vec();
    let mut ar = p.b_r.data().to_vec();
    let mut ah = p.b_h.data().to_vec();
    vec_mat(x, p.w_z.data(), hidden, &mut az);
    vec_mat(x, p.w_r.data(), hidden, &mut ar);
    vec_mat(x, p.w_h.data(), hidden, &mut ah);
    vec_mat(h_prev, p.u_z.data(), hidden, &mut az);
    vec_mat(h_prev, p.u_r.data(), hidden, &mut ar);
    let z: Vec<T> = az.into_iter().map(sigmoid).collect();
    let r: Vec<T> = ar.into_iter().map(sigmoid).collect();
    let rh: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
    vec_mat(&rh, p.u_h.data(), hidden, &mut ah);
    Ok((0..hidden)
        .map(|k| (T::one() - z[k]) * h_prev[k] + z[k] * ah[k].tanh())
        .collect())
}

/// Runs separate forward and backward cells over `seq` and concatenates
/// `[h_fwd || h_bwd]` per step.
pub fn bidirectional<T: Real>(seq: &[Vec<T>], fwd: &GruParams<T>, bwd: &GruParams<T>) -> Result<Vec<Vec<T>>> {
    if seq.is_empty() {
        return Err(Error::Invalid("bidirectional GRU needs a nonempty sequence".into()));
    }
    let run = |p: &GruParams<T>, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Vec<T>>> {
        let mut out = vec![Vec::new(); seq.len()];
        let mut h = vec![T::zero(); p.hidden()];
        for t in order {
            h = gru_cell(&seq[t], &h, p)?;
            out[t] = h.clone();
        }
        Ok(out)
    };
    let f = run(fwd, &mut (0..seq.len()))?;
    let b = run(bwd, &mut (0..seq.len()).rev())?;
    Ok(f.into_iter()
        .zip(b)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect())
}

struct GruCache<T> {
    x: Tensor<T>,
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    hh: Vec<T>,
}

/// GRU over a `[steps, in]` sequence producing `[steps, hidden]`. With
/// `reverse` the recurrence runs from the last step to the first.
pub struct Gru<T> {
    pub params: [Param<T>; 9],
    pub reverse: bool,
    cache: Option<GruCache<T>>,
    h0_grad: Option<Vec<T>>,
}

const W_Z: usize = 0;
const W_R: usize = 1;
const W_H: usize = 2;
const U_Z: usize = 3;
const U_R: usize = 4;
const U_H: usize = 5;
const B_Z: usize = 6;
const B_R: usize = 7;
const B_H: usize = 8;

impl<T: Real> Gru<T> {
    pub fn new<R: Rng>(name: &str, n_in: usize, hidden: usize, reverse: bool, rng: &mut R) -> Self {
        let wl = (6.0 / (n_in + hidden) as f64).sqrt();
        let ul = (6.0 / (2 * hidden) as f64).sqrt();
        let mut w = |rows: usize, limit: f64| Tensor::new(vec![rows, hidden], uniform(rng, rows * hidden, limit)).unwrap();
        let (w_z, w_r, w_h) = (w(n_in, wl), w(n_in, wl), w(n_in, wl));
        let (u_z, u_r, u_h) = (w(hidden, ul), w(hidden, ul), w(hidden, ul));
        Self::from_params(
            name,
            GruParams {
                w_z,
                w_r,
                w_h,
                u_z,
                u_r,
                u_h,
                b_z: Tensor::zeros(&[hidden]),
                b_r: Tensor::zeros(&[hidden]),
                b_h: Tensor::zeros(&[hidden]),
            },
            reverse,
        )
    }

    pub fn from_params(name: &str, p: GruParams<T>, reverse: bool) -> Self {
        let mk = |n: &str, t: Tensor<T>| Param::new(format!("{name}.{n}"), t);
        Self {
            params: [
                mk("w_z", p.w_z),
                mk("w_r", p.w_r),
                mk("w_h", p.w_h),
                mk("u_z", p.u_z),
                mk("u_r", p.u_r),
                mk("u_h", p.u_h),
                mk("b_z", p.b_z),
                mk("b_r", p.b_r),
                mk("b_h", p.b_h),
            ],
            reverse,
            cache: None,
            h0_grad: None,
        }
    }

    pub fn to_params(&self) -> GruParams<T> {
        let v = |i: usize| self.params[i].value.clone();
        GruParams {
            w_z: v(W_Z),
            w_r: v(W_R),
            w_h: v(W_H),
            u_z: v(U_Z),
            u_r: v(U_R),
            u_h: v(U_H),
            b_z: v(B_Z),
            b_r: v(B_R),
            b_h: v(B_H),
        }
    }

    pub fn hidden(&self) -> usize {
        self.params[W_Z].value.shape()[1]
    }

    pub fn n_in(&self) -> usize {
        self.params[W_Z].value.shape()[0]
    }

    fn order(&self, steps: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.forward_from(x, None)
    }

    /// Forward pass starting from state `h0` (zeros when `None`).
    pub fn forward_from(&mut self, x: Tensor<T>, h0: Option<&[T]>) -> Result<Tensor<T>> {
        let hd = self.hidden();
        if h0.is_some_and(|h| h.len() != hd) {
            return Err(Error::Shape(format!("gru initial state must have length {hd}")));
        }
        if x.shape().len() != 2 || x.shape()[1] != self.n_in() {
            return Err(Error::Shape(format!(
                "gru expects [steps, {}], got {:?}",
                self.n_in(),
                x.shape()
            )));
        }
        let steps = x.shape()[0];
        let p = &self.params;
        let az_x = matmul_rows(&x, &p[W_Z].value, Some(&p[B_Z].value))?;
        let ar_x = matmul_rows(&x, &p[W_R].value, Some(&p[B_R].value))?;
        let ah_x = matmul_rows(&x, &p[W_H].value, Some(&p[B_H].value))?;
        let mut h_prev = vec![T::zero(); steps * hd];
        let mut z = vec![T::zero(); steps * hd];
        let mut r = vec![T::zero(); steps * hd];
        let mut hh = vec![T::zero(); steps * hd];
        let mut out = vec![T::zero(); steps * hd];
        let mut h = h0.map_or_else(|| vec![T::zero(); hd], <[T]>::to_vec);
        let mut az = vec![T::zero(); hd];
        let mut ar = vec![T::zero(); hd];
        let mut ah = vec![T::zero(); hd];
        let mut rh = vec![T::zero(); hd];
        for t in self.order(steps) {
            let row = t * hd..(t + 1) * hd;
            h_prev[row.clone()].copy_from_slice(&h);
            az.copy_from_slice(&az_x.data()[row.clone()]);
            ar.copy_from_slice(&ar_x.data()[row.clone()]);
            ah.copy_from_slice(&ah_x.data()[row.clone()]);
            vec_mat(&h, p[U_Z].value.data(), hd, &mut az);
            vec_mat(&h, p[U_R].value.data(), hd, &mut ar);
            for k in 0..hd {
                az[k] = sigmoid(az[k]);
                ar[k] = sigmoid(ar[k]);
                rh[k] = ar[k] * h[k];
            }
            vec_mat(&rh, p[U_H].value.data(), hd, &mut ah);
            for k in 0..hd {
                ah[k] = ah[k].tanh();
                h[k] = (T::one() - az[k]) * h[k] + az[k] * ah[k];
            }
            z[row.clone()].copy_from_slice(&az);
            r[row.clone()].copy_from_slice(&ar);
            hh[row.clone()].copy_from_slice(&ah);
            out[row].copy_from_slice(&h);
        }
        self.cache = Some(GruCache { x, h_prev, z, r, hh });
        Tensor::new(vec![steps, hd], out)
    }

    pub fn backward(&mut self, gy: &Tensor<T>, want_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let hd = self.hidden();
        let n_in = self.n_in();
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("gru backward before forward".into()))?;
        let steps = cache.x.shape()[0];
        if gy.shape() != [steps, hd] {
            return Err(Error::Shape(format!("gru grad {:?} != [{steps}, {hd}]", gy.shape())));
        }
        let mut da_z = vec![T::zero(); steps * hd];
        let mut da_r = vec![T::zero(); steps * hd];
        let mut da_h = vec![T::zero(); steps * hd];
        let mut dh_next = vec![T::zero(); hd];
        let mut dh_prev = vec![T::zero(); hd];
        let mut d_rh = vec![T::zero(); hd];
        let mut rh = vec![T::zero(); hd];
        let order: Vec<usize> = self.order(steps).collect();
        for &t in order.iter().rev() {
            let row = t * hd..(t + 1) * hd;
            let hp = &cache.h_prev[row.clone()];
            let z = &cache.z[row.clone()];
            let r = &cache.r[row.clone()];
            let hh = &cache.hh[row.clone()];
            let g = &gy.data()[row.clone()];
            for k in 0..hd {
                let dh = g[k] + dh_next[k];
                let dz = dh * (hh[k] - hp[k]);
                da_h[t * hd + k] = dh * z[k] * (T::one() - hh[k] * hh[k]);
                da_z[t * hd + k] = dz * z[k] * (T::one() - z[k]);
                dh_prev[k] = dh * (T::one() - z[k]);
                rh[k] = r[k] * hp[k];
                d_rh[k] = T::zero();
            }
            let dah = &da_h[row.clone()];
            mat_vec_t(self.params[U_H].value.data(), dah, &mut d_rh);
            outer_acc(&rh, dah, self.params[U_H].grad.data_mut());
            for k in 0..hd {
                let dr = d_rh[k] * hp[k];
                dh_prev[k] += d_rh[k] * r[k];
                da_r[t * hd + k] = dr * r[k] * (T::one() - r[k]);
            }
            let daz = &da_z[row.clone()];
            let dar = &da_r[row];
            outer_acc(hp, daz, self.params[U_Z].grad.data_mut());
            outer_acc(hp, dar, self.params[U_R].grad.data_mut());
            mat_vec_t(self.params[U_Z].value.data(), daz, &mut dh_prev);
            mat_vec_t(self.params[U_R].value.data(), dar, &mut dh_prev);
            std::mem::swap(&mut dh_next, &mut dh_prev);
        }
        self.h0_grad = Some(dh_next);
        let x = cache.x.data();
        for (w, b, da) in [(W_Z, B_Z, &da_z), (W_R, B_R, &da_r), (W_H, B_H, &da_h)] {
            for t in 0..steps {
                let d = &da[t * hd..(t + 1) * hd];
                outer_acc(&x[t * n_in..(t + 1) * n_in], d, self.params[w].grad.data_mut());
                for (a, &v) in self.params[b].grad.data_mut().iter_mut().zip(d) {
                    *a += v;
                }
            }
        }
        if !want_input_grad {
            return Ok(None);
        }
        let mut gx = Tensor::zeros(&[steps, n_in]);
        for t in 0..steps {
            let out = &mut gx.data_mut()[t * n_in..(t + 1) * n_in];
            for (w, da) in [(W_Z, &da_z), (W_R, &da_r), (W_H, &da_h)] {
                mat_vec_t(self.params[w].value.data(), &da[t * hd..(t + 1) * hd], out);
            }
        }
        Ok(Some(gx))
    }

    /// Gradient with respect to the initial state of the last backward pass.
    pub fn initial_state_grad(&self) -> Option<&[T]> {
        self.h0_grad.as_deref()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.params.iter_mut().collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.params.iter().collect()
    }
}

/// Forward and reverse GRUs over the same input, outputs concatenated.
pub struct BiGru<T> {
    pub fwd: Gru<T>,
    pub bwd: Gru<T>,
}

impl<T: Real> BiGru<T> {
    pub fn new<R: Rng>(name: &str, n_in: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fwd: Gru::new(&format!("{name}.fwd"), n_in, hidden, false, rng),
            bwd: Gru::new(&format!("{name}.bwd"), n_in, hidden, true, rng),
        }
    }

    pub fn out_width(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let steps = x.shape().first().copied().unwrap_or(0);
        if steps == 0 {
            return Err(Error::Invalid("bidirectional GRU needs a nonempty sequence".into()));
        }
        let f = self.fwd.forward(x.clone())?;
        let b = self.bwd.forward(x)?;
        let (hf, hb) = (self.fwd.hidden(), self.bwd.hidden());
        let mut out = Vec::with_capacity(steps * (hf + hb));
        for t in 0..steps {
            out.extend_from_slice(&f.data()[t * hf..(t + 1) * hf]);
            out.extend_from_slice(&b.data()[t * hb..(t + 1) * hb]);
        }
        Tensor::new(vec![steps, hf + hb], out)
    }

    pub fn backward(&mut self, gy: &Tensor<T>, want_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let (hf, hb) = (self.fwd.hidden(), self.bwd.hidden());
        let steps = gy.shape()[0];
        let mut gf = Vec::with_capacity(steps * hf);
        let mut gb = Vec::with_capacity(steps * hb);
        for row in gy.data().chunks_exact(hf + hb) {
            gf.extend_from_slice(&row[..hf]);
            gb.extend_from_slice(&row[hf..]);
        }
        let dxf = self.fwd.backward(&Tensor::new(vec![steps, hf], gf)?, want_input_grad)?;
        let dxb = self.bwd.backward(&Tensor::new(vec![steps, hb], gb)?, want_input_grad)?;
        Ok(match (dxf, dxb) {
            (Some(mut a), Some(b)) => {
                for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += y;
                }
                Some(a)
            }
            _ => None,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.fwd.params_mut();
        v.extend(self.bwd.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.fwd.params();
        v.extend(self.bwd.params());
        v
    }
}
