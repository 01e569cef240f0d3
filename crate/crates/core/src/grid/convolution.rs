//! Periodic discrete convolution `(K*U)_a = sum_b K_b U_{a+b}` and its adjoint.

use rustfft::num_complex::Complex64;

use super::{GridSpec, NodalField, PeriodicFft, StencilKernel};
use crate::error::{Error, Result};

/// Widths above this use the spectral path in [`convolve`] and [`Convolver`].
pub const SPECTRAL_WIDTH_THRESHOLD: usize = 9;

fn check_compatible(kernel: &StencilKernel, spec: &GridSpec) -> Result<()> {
    if kernel.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: kernel.dim(),
        });
    }
    if kernel.width() > spec.n() {
        return Err(Error::KernelTooWide {
            width: kernel.width(),
            n: spec.n(),
        });
    }
    Ok(())
}

/// Direct summation with indices wrapped modulo `n`.
pub fn convolve_periodic(kernel: &StencilKernel, u: &NodalField) -> Result<NodalField> {
    check_compatible(kernel, u.spec())?;
    let mut out = vec![0.0; u.values().len()];
    direct_into(kernel, u.spec(), u.values(), &mut out);
    Ok(NodalField::from_parts_unchecked(u.spec().clone(), out))
}

/// Same result as [`convolve_periodic`] through the DFT diagonalization of the
/// circulant operator.
pub fn convolve_spectral(kernel: &StencilKernel, u: &NodalField) -> Result<NodalField> {
    check_compatible(kernel, u.spec())?;
    let conv = Convolver::spectral(kernel, u.spec())?;
    Ok(NodalField::from_parts_unchecked(u.spec().clone(), conv.apply(u.values())))
}

/// Convolution with automatic path selection.
pub fn convolve(kernel: &StencilKernel, u: &NodalField) -> Result<NodalField> {
    let conv = Convolver::new(kernel, u.spec())?;
    Ok(NodalField::from_parts_unchecked(u.spec().clone(), conv.apply(u.values())))
}

/// Transpose of [`convolve`] under the node-sum inner product.
pub fn convolve_adjoint(kernel: &StencilKernel, w: &NodalField) -> Result<NodalField> {
    let conv = Convolver::new(kernel, w.spec())?;
    Ok(NodalField::from_parts_unchecked(w.spec().clone(), conv.apply_adjoint(w.values())))
}

fn direct_into(kernel: &StencilKernel, spec: &GridSpec, u: &[f64], out: &mut [f64]) {
    let shape = spec.shape3();
    let width = kernel.width();
    let kw = {
        let mut s = [1usize; 3];
        for a in 0..kernel.dim() {
            s[3 - kernel.dim() + a] = width;
        }
        s
    };
    let kr = [kw[0] / 2, kw[1] / 2, kw[2] / 2];
    // wrapped index tables: wrap[a][i * kw[a] + j] = (i + j - kr[a]) mod shape[a]
    let wrap: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            let n = shape[a] as isize;
            let mut t = Vec::with_capacity(shape[a] * kw[a]);
            for i in 0..shape[a] as isize {
                for j in 0..kw[a] as isize {
                    t.push((i + j - kr[a] as isize).rem_euclid(n) as usize);
                }
            }
            t
        })
        .collect();
    let weights = kernel.weights();
    let (n0, n1, n2) = (shape[0], shape[1], shape[2]);
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            let row = &mut out[(i0 * n1 + i1) * n2..(i0 * n1 + i1 + 1) * n2];
            row.iter_mut().for_each(|v| *v = 0.0);
            for j0 in 0..kw[0] {
                let s0 = wrap[0][i0 * kw[0] + j0];
                for j1 in 0..kw[1] {
                    let s1 = wrap[1][i1 * kw[1] + j1];
                    let src = &u[(s0 * n1 + s1) * n2..(s0 * n1 + s1 + 1) * n2];
                    let kbase = (j0 * kw[1] + j1) * kw[2];
                    for j2 in 0..kw[2] {
                        let k = weights[kbase + j2];
                        if k == 0.0 {
                            continue;
                        }
                        let shift = j2 as isize - kr[2] as isize;
                        accumulate_shifted(row, src, k, shift);
                    }
                }
            }
        }
    }
}

// row[i] += k * src[(i + shift) mod len]
fn accumulate_shifted(row: &mut [f64], src: &[f64], k: f64, shift: isize) {
    let n = src.len();
    let s = shift.rem_euclid(n as isize) as usize;
    let (head, tail) = row.split_at_mut(n - s);
    for (r, v) in head.iter_mut().zip(&src[s..]) {
        *r += k * v;
    }
    for (r, v) in tail.iter_mut().zip(&src[..s]) {
        *r += k * v;
    }
}

/// A kernel bound to a grid, with the spectrum cached when the spectral path is used.
#[derive(Debug, Clone)]
pub struct Convolver {
    spec: GridSpec,
    kernel: StencilKernel,
    spectral: Option<SpectralPath>,
}

#[derive(Debug, Clone)]
struct SpectralPath {
    fft: PeriodicFft,
    // DFT of the kernel embedded periodically; forward multiplier is its conjugate
    kernel_hat: Vec<Complex64>,
}

impl Convolver {
    pub fn new(kernel: &StencilKernel, spec: &GridSpec) -> Result<Self> {
        if kernel.width() > SPECTRAL_WIDTH_THRESHOLD {
            Self::spectral(kernel, spec)
        } else {
            Self::direct(kernel, spec)
        }
    }

    pub fn direct(kernel: &StencilKernel, spec: &GridSpec) -> Result<Self> {
        check_compatible(kernel, spec)?;
        Ok(Self {
            spec: spec.clone(),
            kernel: kernel.clone(),
            spectral: None,
        })
    }

    pub fn spectral(kernel: &StencilKernel, spec: &GridSpec) -> Result<Self> {
        check_compatible(kernel, spec)?;
        let fft = PeriodicFft::new(spec);
        let kernel_hat = kernel_spectrum(kernel, spec, &fft);
        Ok(Self {
            spec: spec.clone(),
            kernel: kernel.clone(),
            spectral: Some(SpectralPath { fft, kernel_hat }),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &StencilKernel {
        &self.kernel
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.spec.len());
        match &self.spectral {
            Some(sp) => {
                let mut buf = sp.fft.forward_real(u);
                for (z, k) in buf.iter_mut().zip(&sp.kernel_hat) {
                    *z *= k.conj();
                }
                sp.fft.inverse_real(buf)
            }
            None => {
                let mut out = vec![0.0; u.len()];
                direct_into(&self.kernel, &self.spec, u, &mut out);
                out
            }
        }
    }

    pub fn apply_adjoint(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.spec.len());
        match &self.spectral {
            Some(sp) => {
                let mut buf = sp.fft.forward_real(w);
                for (z, k) in buf.iter_mut().zip(&sp.kernel_hat) {
                    *z *= k;
                }
                sp.fft.inverse_real(buf)
            }
            None => {
                let mut out = vec![0.0; w.len()];
                direct_into(&self.kernel.flipped(), &self.spec, w, &mut out);
                out
            }
        }
    }
}

/// DFT of the kernel placed at indices `offset mod n`.
pub(crate) fn kernel_spectrum(kernel: &StencilKernel, spec: &GridSpec, fft: &PeriodicFft) -> Vec<Complex64> {
    let mut embedded = vec![Complex64::default(); spec.len()];
    let n = spec.n() as isize;
    let d = spec.dim();
    for (flat, &w) in kernel.weights().iter().enumerate() {
        let off = kernel.offsets(flat);
        let mut idx = [0usize; 3];
        for a in 0..d {
            idx[a] = off[3 - d + a].rem_euclid(n) as usize;
        }
        embedded[spec.flat_index(&idx)] += w;
    }
    fft.forward(&mut embedded);
    embedded
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn delta_is_identity() {
        let spec = GridSpec::unit(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = NodalField::new(spec.clone(), random_values(&mut rng, 64)).unwrap();
        for width in [1, 3, 5] {
            let k = StencilKernel::delta(2, width).unwrap();
            assert_eq!(convolve_periodic(&k, &u).unwrap(), u);
            let s = convolve_spectral(&k, &u).unwrap();
            for (a, b) in s.values().iter().zip(u.values()) {
                assert!((a - b).abs() < 1e-14);
            }
            assert_eq!(convolve_adjoint(&k, &u).unwrap(), u);
        }
    }

    #[test]
    fn averaging_preserves_constants() {
        let spec = GridSpec::unit(2, 16).unwrap();
        let u = NodalField::constant(spec, 0.7);
        let k = StencilKernel::constant(2, 5, 1.0 / 25.0).unwrap();
        for out in [convolve_periodic(&k, &u).unwrap(), convolve_spectral(&k, &u).unwrap()] {
            assert!(out.values().iter().all(|v| (v - 0.7).abs() < 1e-14));
        }
    }

    #[test]
    fn hand_computed_wraparound() {
        let spec = GridSpec::unit(1, 4).unwrap();
        let u = NodalField::new(spec, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let k = StencilKernel::new(1, 3, vec![1.0, 0.0, -1.0]).unwrap();
        let expected = [-1.0, 0.0, 1.0, 0.0];
        assert_eq!(convolve_periodic(&k, &u).unwrap().values(), &expected);
        let s = convolve_spectral(&k, &u).unwrap();
        for (a, b) in s.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn errors_on_mismatch() {
        let u = NodalField::zeros(GridSpec::unit(2, 8).unwrap());
        let k3 = StencilKernel::delta(3, 3).unwrap();
        assert!(matches!(convolve_periodic(&k3, &u), Err(Error::DimensionMismatch { .. })));
        let wide = StencilKernel::delta(2, 9).unwrap();
        assert!(matches!(convolve_spectral(&wide, &u), Err(Error::KernelTooWide { .. })));
    }

    #[test]
    fn symmetric_kernel_is_self_adjoint() {
        let spec = GridSpec::unit(2, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = random_values(&mut rng, 25);
        // symmetrize under negation of offsets
        for i in 0..25 {
            let s = 0.5 * (w[i] + w[24 - i]);
            w[i] = s;
            w[24 - i] = s;
        }
        let k = StencilKernel::new(2, 5, w).unwrap();
        let u = NodalField::new(spec, random_values(&mut rng, 144)).unwrap();
        let a = convolve_periodic(&k, &u).unwrap();
        let b = convolve_adjoint(&k, &u).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_identity_antisymmetric_1d() {
        let spec = GridSpec::unit(1, 16).unwrap();
        let k = StencilKernel::new(1, 3, vec![1.0, 0.0, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u = NodalField::new(spec.clone(), random_values(&mut rng, 16)).unwrap();
            let w = NodalField::new(spec.clone(), random_values(&mut rng, 16)).unwrap();
            let lhs = dot(convolve_periodic(&k, &u).unwrap().values(), w.values());
            let rhs = dot(u.values(), convolve_adjoint(&k, &w).unwrap().values());
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn direct_and_spectral_agree_large() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (dim, n, width) in [(2, 256, 33), (2, 64, 17), (3, 24, 9), (3, 16, 5)] {
            let spec = GridSpec::unit(dim, n).unwrap();
            let k = StencilKernel::new(dim, width, random_values(&mut rng, width.pow(dim as u32))).unwrap();
            let u = NodalField::new(spec.clone(), random_values(&mut rng, spec.len())).unwrap();
            let a = convolve_periodic(&k, &u).unwrap();
            let b = convolve_spectral(&k, &u).unwrap();
            let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 1e-10 * scale, "dim {dim} n {n} width {width}: {err}");
            let aa = convolve_periodic(&k.flipped(), &u).unwrap();
            let bb = Convolver::spectral(&k, &spec).unwrap().apply_adjoint(u.values());
            let err = aa.values().iter().zip(&bb).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 1e-10 * scale);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn linearity_and_shift_equivariance(
            seed in 0u64..1000,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            s0 in -5isize..5,
            s1 in -5isize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = GridSpec::unit(2, 10).unwrap();
            let k = StencilKernel::new(2, 5, random_values(&mut rng, 25)).unwrap();
            let u = NodalField::new(spec.clone(), random_values(&mut rng, 100)).unwrap();
            let v = NodalField::new(spec.clone(), random_values(&mut rng, 100)).unwrap();
            let combo: Vec<f64> = u.values().iter().zip(v.values()).map(|(x, y)| a * x + b * y).collect();
            let lhs = convolve_periodic(&k, &u.with_values(combo).unwrap()).unwrap();
            let ku = convolve_periodic(&k, &u).unwrap();
            let kv = convolve_periodic(&k, &v).unwrap();
            for i in 0..100 {
                let rhs = a * ku.values()[i] + b * kv.values()[i];
                prop_assert!((lhs.values()[i] - rhs).abs() < 1e-12);
            }
            let shifted = convolve_periodic(&k, &u.shifted(&[s0, s1])).unwrap();
            let expected = ku.shifted(&[s0, s1]);
            for (x, y) in shifted.values().iter().zip(expected.values()) {
                prop_assert!((x - y).abs() < 1e-13);
            }
        }

        #[test]
        fn adjoint_identity_random(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = GridSpec::unit(2, 16).unwrap();
            let k = StencilKernel::new(2, 11, random_values(&mut rng, 121)).unwrap();
            let u = random_values(&mut rng, 256);
            let w = random_values(&mut rng, 256);
            for conv in [Convolver::direct(&k, &spec).unwrap(), Convolver::spectral(&k, &spec).unwrap()] {
                let lhs = dot(&conv.apply(&u), &w);
                let rhs = dot(&u, &conv.apply_adjoint(&w));
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            }
        }
    }
}
