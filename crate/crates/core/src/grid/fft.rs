use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::GridSpec;

/// Multi-dimensional DFT on a cubic periodic grid, applied axis by axis.
///
/// The forward transform is unnormalized; the inverse divides by `n^d`.
#[derive(Clone)]
pub struct PeriodicFft {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PeriodicFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicFft")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

impl PeriodicFft {
    pub fn new(spec: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dim: spec.dim(),
            n: spec.n(),
            forward: planner.plan_fft_forward(spec.n()),
            inverse: planner.plan_fft_inverse(spec.n()),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.inverse);
        let scale = 1.0 / self.len() as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    /// Forward transform of real data.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut spectrum);
        spectrum.into_iter().map(|z| z.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], plan: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.len());
        let n = self.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut block = Vec::new();
        for axis in 0..self.dim {
            let inner = n.pow((self.dim - 1 - axis) as u32);
            if inner == 1 {
                plan.process_with_scratch(data, &mut scratch);
                continue;
            }
            // gather each [n x inner] slab transposed so the lines become contiguous
            block.resize(n * inner, Complex64::default());
            for slab in data.chunks_exact_mut(n * inner) {
                for k in 0..n {
                    for i in 0..inner {
                        block[i * n + k] = slab[k * inner + i];
                    }
                }
                plan.process_with_scratch(&mut block, &mut scratch);
                for k in 0..n {
                    for i in 0..inner {
                        slab[k * inner + i] = block[i * n + k];
                    }
                }
            }
        }
    }

    /// Signed integer frequency of index `k` (`k` or `k - n`).
    pub fn signed_frequency(&self, k: usize) -> isize {
        if k <= self.n / 2 {
            k as isize
        } else {
            k as isize - self.n as isize
        }
    }

    /// Builds a diagonal multiplier from a function of the per-axis frequency indices.
    pub fn multiplier(&self, spec: &GridSpec, mut f: impl FnMut(&[usize]) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let idx = spec.multi_index(i);
                f(&idx[..self.dim])
            })
            .collect()
    }
}
