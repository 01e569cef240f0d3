use crate::error::{Error, Result};

/// Centered convolution stencil of odd width `width` per axis.
///
/// Weights are stored lexicographically over the offsets
/// `-(width-1)/2 ..= (width-1)/2`, axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilKernel {
    dim: usize,
    width: usize,
    weights: Vec<f64>,
}

impl StencilKernel {
    pub fn new(dim: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidKernel(format!("dimension {dim} not in 1..=3")));
        }
        if width % 2 == 0 {
            return Err(Error::InvalidKernel(format!("width {width} is even")));
        }
        if weights.len() != width.pow(dim as u32) {
            return Err(Error::InvalidKernel(format!(
                "{} weights for a {dim}-dimensional stencil of width {width}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel weights"));
        }
        Ok(Self { dim, width, weights })
    }

    pub fn zeros(dim: usize, width: usize) -> Result<Self> {
        Self::new(dim, width, vec![0.0; width.pow(dim as u32)])
    }

    /// Unit weight at offset zero.
    pub fn delta(dim: usize, width: usize) -> Result<Self> {
        let mut k = Self::zeros(dim, width)?;
        let c = k.weights.len() / 2;
        k.weights[c] = 1.0;
        Ok(k)
    }

    pub fn constant(dim: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(dim, width, vec![value; width.pow(dim as u32)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn radius(&self) -> usize {
        (self.width - 1) / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Offsets of the flat weight index, padded to three axes.
    pub fn offsets(&self, flat: usize) -> [isize; 3] {
        let r = self.radius() as isize;
        let mut o = [0; 3];
        let mut rest = flat;
        for a in (0..self.dim).rev() {
            o[3 - self.dim + a] = (rest % self.width) as isize - r;
            rest /= self.width;
        }
        o
    }

    /// Weight at the given offsets (zero outside the stencil).
    pub fn weight_at(&self, offsets: &[isize]) -> f64 {
        let r = self.radius() as isize;
        let mut flat = 0usize;
        for &o in &offsets[..self.dim] {
            if o.abs() > r {
                return 0.0;
            }
            flat = flat * self.width + (o + r) as usize;
        }
        self.weights[flat]
    }

    /// The kernel with all offsets negated.
    pub fn flipped(&self) -> Self {
        let mut weights = self.weights.clone();
        weights.reverse();
        Self {
            dim: self.dim,
            width: self.width,
            weights,
        }
    }
}

/// Interpolates a kernel onto a wider centered stencil covering the same
/// physical support (multilinear in the stencil coordinates), then rescales
/// so that the response to a constant field is unchanged.
pub fn upsample_kernel_bilinear(kernel: &StencilKernel, target_width: usize) -> Result<StencilKernel> {
    if target_width % 2 == 0 {
        return Err(Error::InvalidKernel(format!("target width {target_width} is even")));
    }
    if target_width < kernel.width {
        return Err(Error::InvalidKernel(format!(
            "target width {target_width} is narrower than {}",
            kernel.width
        )));
    }
    if target_width == kernel.width {
        return Ok(kernel.clone());
    }
    let dim = kernel.dim;
    let coarse_r = kernel.radius() as f64;
    let fine_r = ((target_width - 1) / 2) as f64;
    let ratio = coarse_r / fine_r;
    let mut fine = StencilKernel::zeros(dim, target_width)?;
    for flat in 0..fine.weights.len() {
        let off = fine.offsets(flat);
        // coarse coordinates of this fine node, per active axis
        let coords: Vec<f64> = off[3 - dim..].iter().map(|&o| o as f64 * ratio).collect();
        let mut value = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut at = [0isize; 3];
            for (a, &t) in coords.iter().enumerate() {
                let lo = t.floor();
                let frac = t - lo;
                let upper = (corner >> a) & 1 == 1;
                w *= if upper { frac } else { 1.0 - frac };
                at[a] = lo as isize + upper as isize;
            }
            if w != 0.0 {
                value += w * kernel.weight_at(&at);
            }
        }
        fine.weights[flat] = value;
    }
    let coarse_sum = kernel.sum();
    let fine_sum = fine.sum();
    if fine_sum != 0.0 {
        let scale = coarse_sum / fine_sum;
        fine.weights.iter_mut().for_each(|w| *w *= scale);
    }
    Ok(fine)
}
