//! Scalar fully connected network `F(s) = s^L`, `s^l = rho(W^l s^(l-1) + b^l)`
//! with `rho(s) = exp(-s^2)` on the hidden layers and a linear output layer.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Hidden and output layer sizes used throughout.
pub const DEFAULT_LAYER_SIZES: [usize; 6] = [32, 16, 8, 4, 2, 1];

const CHUNK: usize = 64;
const LANES: usize = 8;

/// Network parameters stored flat as `W^1, b^1, W^2, b^2, ...` with each
/// `W^l` row-major of shape `N_l x N_(l-1)`, `N_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    theta: Vec<f64>,
    offsets: Vec<usize>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(sizes.len() + 1);
    let mut at = 0;
    let mut fan_in = 1;
    for &s in sizes {
        offsets.push(at);
        at += s * fan_in + s;
        fan_in = s;
    }
    offsets.push(at);
    offsets
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) || *sizes.last().unwrap() != 1 {
            return Err(Error::InvalidParameter(format!(
                "layer sizes {sizes:?} must be positive and end in 1"
            )));
        }
        let offsets = layer_offsets(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            theta: vec![0.0; *offsets.last().unwrap()],
            offsets,
        })
    }

    pub fn from_flat(sizes: &[usize], theta: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(sizes)?;
        if theta.len() != p.theta.len() {
            return Err(Error::InvalidParameter(format!(
                "{} parameters for layer sizes {sizes:?} (expected {})",
                theta.len(),
                p.theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        p.theta = theta;
        Ok(p)
    }

    /// Weights and biases drawn from `N(0, 1/fan_in)`.
    pub fn random_normal(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(sizes)?;
        let mut fan_in = 1;
        for l in 0..sizes.len() {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            let (lo, hi) = (p.offsets[l], p.offsets[l + 1]);
            for t in &mut p.theta[lo..hi] {
                *t = normal.sample(rng);
            }
            fan_in = sizes[l];
        }
        Ok(p)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn fan_in(&self, l: usize) -> usize {
        if l == 0 { 1 } else { self.sizes[l - 1] }
    }

    /// `(W^l, b^l)` of layer `l` (zero-based).
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let start = self.offsets[l];
        let nw = self.sizes[l] * self.fan_in(l);
        let (w, b) = self.theta[start..self.offsets[l + 1]].split_at(nw);
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let start = self.offsets[l];
        let nw = self.sizes[l] * self.fan_in(l);
        let end = self.offsets[l + 1];
        self.theta[start..end].split_at_mut(nw)
    }

    pub fn forward(&self, s: f64) -> f64 {
        let mut out = [0.0];
        self.forward_batch(&[s], &mut out);
        out[0]
    }

    pub fn derivative(&self, s: f64) -> f64 {
        self.eval_with_derivatives(s).1
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        self.eval_with_derivatives(s).2
    }

    /// `(F(s), F'(s), F''(s))`.
    pub fn eval_with_derivatives(&self, s: f64) -> (f64, f64, f64) {
        let (mut f, mut d1, mut d2) = ([0.0], [0.0], [0.0]);
        self.forward_batch_derivatives(&[s], &mut f, &mut d1, &mut d2);
        (f[0], d1[0], d2[0])
    }

    pub fn forward_batch(&self, inputs: &[f64], out: &mut [f64]) {
        assert_eq!(inputs.len(), out.len());
        let width = self.sizes.iter().copied().max().unwrap();
        let mut a = vec![0.0; width * CHUNK];
        let mut z = vec![0.0; width * CHUNK];
        for (xs, ys) in inputs.chunks(CHUNK).zip(out.chunks_mut(CHUNK)) {
            load_chunk(xs, &mut a);
            let mut fan_in = 1;
            for l in 0..self.sizes.len() {
                let (w, b) = self.layer(l);
                let rows = self.sizes[l];
                affine(w, Some(b), rows, fan_in, &a, &mut z);
                if l + 1 < self.sizes.len() {
                    gaussian_slice(&z[..rows * CHUNK], &mut a[..rows * CHUNK]);
                } else {
                    a[..CHUNK].copy_from_slice(&z[..CHUNK]);
                }
                fan_in = rows;
            }
            ys.copy_from_slice(&a[..xs.len()]);
        }
    }

    /// Values, first and second derivatives by forward-mode propagation.
    pub fn forward_batch_derivatives(&self, inputs: &[f64], f: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
        assert!(f.len() == inputs.len() && d1.len() == inputs.len() && d2.len() == inputs.len());
        let width = self.sizes.iter().copied().max().unwrap();
        let buf = || vec![0.0; width * CHUNK];
        let (mut a, mut da, mut dda) = (buf(), buf(), buf());
        let (mut z, mut dz, mut ddz) = (buf(), buf(), buf());
        let layers = self.sizes.len();
        for (ci, xs) in inputs.chunks(CHUNK).enumerate() {
            let c = xs.len();
            load_chunk(xs, &mut a);
            da[..CHUNK].iter_mut().for_each(|v| *v = 1.0);
            dda[..CHUNK].iter_mut().for_each(|v| *v = 0.0);
            let mut fan_in = 1;
            for l in 0..layers {
                let (w, b) = self.layer(l);
                let rows = self.sizes[l];
                affine(w, Some(b), rows, fan_in, &a, &mut z);
                affine(w, None, rows, fan_in, &da, &mut dz);
                affine(w, None, rows, fan_in, &dda, &mut ddz);
                let m = rows * CHUNK;
                if l + 1 < layers {
                    gaussian_slice(&z[..m], &mut a[..m]);
                    for k in 0..m {
                        // rho' = -2 z rho, rho'' = (4 z^2 - 2) rho
                        let (zz, g) = (z[k], a[k]);
                        let d = -2.0 * zz * g;
                        let dd = (4.0 * zz * zz - 2.0) * g;
                        da[k] = d * dz[k];
                        dda[k] = dd * dz[k] * dz[k] + d * ddz[k];
                    }
                } else {
                    a[..m].copy_from_slice(&z[..m]);
                    da[..m].copy_from_slice(&dz[..m]);
                    dda[..m].copy_from_slice(&ddz[..m]);
                }
                fan_in = rows;
            }
            let r = ci * CHUNK..ci * CHUNK + c;
            f[r.clone()].copy_from_slice(&a[..c]);
            d1[r.clone()].copy_from_slice(&da[..c]);
            d2[r].copy_from_slice(&dda[..c]);
        }
    }

    /// One pass of the squared-error objective `weight * sum (F(s_i) - t_i)^2`.
    ///
    /// Accumulates the parameter gradient into `grad` (same layout as
    /// [`theta`](Self::theta)), writes `d/ds_i` into `d_inputs` and returns the
    /// unweighted sum of squared residuals.
    pub fn squared_error_backprop(
        &self,
        inputs: &[f64],
        targets: &[f64],
        weight: f64,
        grad: &mut [f64],
        d_inputs: &mut [f64],
    ) -> f64 {
        assert_eq!(grad.len(), self.theta.len());
        assert!(targets.len() == inputs.len() && d_inputs.len() == inputs.len());
        let layers = self.sizes.len();
        // activations per layer for one chunk, acts[0] is the input
        let mut acts: Vec<Vec<f64>> = std::iter::once(1)
            .chain(self.sizes.iter().copied())
            .map(|s| vec![0.0; s * CHUNK])
            .collect();
        let mut pre: Vec<Vec<f64>> = self.sizes.iter().map(|&s| vec![0.0; s * CHUNK]).collect();
        let width = self.sizes.iter().copied().max().unwrap();
        let mut delta = vec![0.0; width * CHUNK];
        let mut delta_prev = vec![0.0; width * CHUNK];
        let mut sum_sq = 0.0;
        for (ci, (xs, ts)) in inputs.chunks(CHUNK).zip(targets.chunks(CHUNK)).enumerate() {
            let c = xs.len();
            load_chunk(xs, &mut acts[0]);
            for l in 0..layers {
                let (w, b) = self.layer(l);
                let rows = self.sizes[l];
                let (prev, rest) = acts.split_at_mut(l + 1);
                let z = &mut pre[l];
                affine(w, Some(b), rows, self.fan_in(l), &prev[l], z);
                let out = &mut rest[0];
                if l + 1 < layers {
                    gaussian_slice(&z[..rows * CHUNK], &mut out[..rows * CHUNK]);
                } else {
                    out[..CHUNK].copy_from_slice(&z[..CHUNK]);
                }
            }
            for k in 0..CHUNK {
                delta[k] = if k < c {
                    let r = acts[layers][k] - ts[k];
                    sum_sq += r * r;
                    2.0 * weight * r
                } else {
                    0.0
                };
            }
            for l in (0..layers).rev() {
                let rows = self.sizes[l];
                let fan_in = self.fan_in(l);
                if l + 1 < layers {
                    // rho'(z) = -2 z rho(z)
                    let z = &pre[l];
                    let g = &acts[l + 1];
                    for k in 0..rows * CHUNK {
                        delta[k] *= -2.0 * z[k] * g[k];
                    }
                }
                let start = self.offsets[l];
                let (gw, gb) = grad[start..self.offsets[l + 1]].split_at_mut(rows * fan_in);
                outer_accumulate(&delta, &acts[l], rows, fan_in, gw, gb);
                let (w, _) = self.layer(l);
                transpose_apply(w, rows, fan_in, &delta, &mut delta_prev);
                std::mem::swap(&mut delta, &mut delta_prev);
            }
            d_inputs[ci * CHUNK..ci * CHUNK + c].copy_from_slice(&delta[..c]);
        }
        sum_sq
    }
}

fn load_chunk(xs: &[f64], a: &mut [f64]) {
    a[..xs.len()].copy_from_slice(xs);
    a[xs.len()..CHUNK].iter_mut().for_each(|v| *v = 0.0);
}

type Lane = [f64; LANES];

#[inline(always)]
fn lane(v: &[f64], at: usize) -> &Lane {
    v[at..at + LANES].try_into().unwrap()
}

// z[j, :] = b[j] + sum_i w[j, i] a[i, :] on one chunk
fn affine(w: &[f64], b: Option<&[f64]>, rows: usize, cols: usize, a: &[f64], z: &mut [f64]) {
    for j in 0..rows {
        let wj = &w[j * cols..(j + 1) * cols];
        let bias = b.map_or(0.0, |b| b[j]);
        for kb in (0..CHUNK).step_by(LANES) {
            let mut acc = [bias; LANES];
            for (i, &wji) in wj.iter().enumerate() {
                let ai = lane(a, i * CHUNK + kb);
                for l in 0..LANES {
                    acc[l] += wji * ai[l];
                }
            }
            z[j * CHUNK + kb..j * CHUNK + kb + LANES].copy_from_slice(&acc);
        }
    }
}

// out[i, :] = sum_j w[j, i] delta[j, :]
fn transpose_apply(w: &[f64], rows: usize, cols: usize, delta: &[f64], out: &mut [f64]) {
    for i in 0..cols {
        for kb in (0..CHUNK).step_by(LANES) {
            let mut acc = [0.0; LANES];
            for j in 0..rows {
                let wji = w[j * cols + i];
                let dj = lane(delta, j * CHUNK + kb);
                for l in 0..LANES {
                    acc[l] += wji * dj[l];
                }
            }
            out[i * CHUNK + kb..i * CHUNK + kb + LANES].copy_from_slice(&acc);
        }
    }
}

// gw[j, i] += <delta[j, :], a[i, :]>, gb[j] += sum delta[j, :]
fn outer_accumulate(delta: &[f64], a: &[f64], rows: usize, cols: usize, gw: &mut [f64], gb: &mut [f64]) {
    for j in 0..rows {
        let mut sb = [0.0; LANES];
        for kb in (0..CHUNK).step_by(LANES) {
            let dj = lane(delta, j * CHUNK + kb);
            for l in 0..LANES {
                sb[l] += dj[l];
            }
        }
        gb[j] += sb.iter().sum::<f64>();
        for i in 0..cols {
            let mut s = [0.0; LANES];
            for kb in (0..CHUNK).step_by(LANES) {
                let dj = lane(delta, j * CHUNK + kb);
                let ai = lane(a, i * CHUNK + kb);
                for l in 0..LANES {
                    s[l] += dj[l] * ai[l];
                }
            }
            gw[j * cols + i] += s.iter().sum::<f64>();
        }
    }
}

fn gaussian_slice(z: &[f64], out: &mut [f64]) {
    for (o, v) in out.chunks_exact_mut(LANES).zip(z.chunks_exact(LANES)) {
        for l in 0..LANES {
            o[l] = exp_nonpositive(-v[l] * v[l]);
        }
    }
}

/// `exp(x)` for `x <= 0`, branch-free so the loops above vectorize.
/// Relative error stays within a few ulp; underflows to zero below -708.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let xc = x.max(-708.0);
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let t = xc * LOG2E + SHIFT;
    let k = t - SHIFT;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    // Taylor polynomial of exp on |r| <= ln2/2, degree 13
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    if x < -708.0 { 0.0 } else { p * scale }
}

/// Network output `F(s)`.
pub fn mlp_forward(mlp: &MlpParams, s: f64) -> f64 {
    mlp.forward(s)
}

pub fn mlp_derivative(mlp: &MlpParams, s: f64) -> f64 {
    mlp.derivative(s)
}

pub fn mlp_second_derivative(mlp: &MlpParams, s: f64) -> f64 {
    mlp.second_derivative(s)
}
