//! Periodic regular grids, nodal fields and stencil kernels.
//!
//! Nodes are stored lexicographically with axis 0 varying slowest. Only the
//! `n^d` distinct nodes are stored; index `n` along any axis is identified
//! with index `0`.

mod convolution;
mod fft;
pub mod io;
mod kernel;

pub use convolution::{Convolver, convolve, convolve_adjoint, convolve_periodic, convolve_spectral};
pub(crate) use convolution::kernel_spectrum;
pub use fft::PeriodicFft;
pub use kernel::{StencilKernel, upsample_kernel_bilinear};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Regular cubic grid on `origin + [0, edge_length)^d` with periodic identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    origin: Vec<f64>,
    edge_length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, origin: Vec<f64>, edge_length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("n = {n} is too small")));
        }
        if origin.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "origin has {} components for a {dim}-dimensional grid",
                origin.len()
            )));
        }
        if !(edge_length > 0.0 && edge_length.is_finite()) || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("edge length must be positive and finite".into()));
        }
        Ok(Self {
            dim,
            n,
            origin,
            edge_length,
        })
    }

    /// The unit cube `[0,1)^d` sampled with `n` nodes per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, vec![0.0; dim], 1.0)
    }

    /// The cube `[-half_width, half_width)^d`.
    pub fn centered(dim: usize, n: usize, half_width: f64) -> Result<Self> {
        Self::new(dim, n, vec![-half_width; dim], 2.0 * half_width)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn edge_length(&self) -> f64 {
        self.edge_length
    }

    /// Grid spacing `h = edge_length / n`.
    pub fn h(&self) -> f64 {
        self.edge_length / self.n as f64
    }

    /// Number of distinct nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Physical volume of the domain.
    pub fn volume(&self) -> f64 {
        self.edge_length.powi(self.dim as i32)
    }

    /// Volume of one grid cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Domain center.
    pub fn center(&self) -> Vec<f64> {
        self.origin.iter().map(|o| o + 0.5 * self.edge_length).collect()
    }

    /// Axis extents padded to three axes, leading axes of size one.
    pub(crate) fn shape3(&self) -> [usize; 3] {
        let mut s = [1; 3];
        for a in 0..self.dim {
            s[3 - self.dim + a] = self.n;
        }
        s
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Physical coordinates of the node with the given flat index.
    pub fn coordinates(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let h = self.h();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.origin[a] + h * idx[a] as f64;
        }
        x
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "d={} n={} vs d={} n={} (or differing domains)",
                self.dim, self.n, other.dim, other.n
            )));
        }
        Ok(())
    }
}

/// Nodal values of a scalar function on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl NodalField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                spec.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("nodal field"));
        }
        Ok(Self { spec, values })
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        let values = vec![value; spec.len()];
        Self { spec, values }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    /// Evaluates `f` at the physical coordinates of every node.
    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let d = spec.dim();
        let values = (0..spec.len())
            .map(|i| {
                let x = spec.coordinates(i);
                f(&x[..d])
            })
            .collect();
        Self { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Replaces the values, keeping the grid. Lengths must agree.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.spec.clone(), values)
    }

    pub(crate) fn from_parts_unchecked(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(spec.len(), values.len());
        Self { spec, values }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_parts_unchecked(self.spec.clone(), self.values.iter().map(|v| c * v).collect())
    }

    /// Cyclic shift by `shift` nodes along each axis: `out[i] = self[i - shift]`.
    pub fn shifted(&self, shift: &[isize]) -> Self {
        let n = self.spec.n as isize;
        let mut out = vec![0.0; self.values.len()];
        for (i, &v) in self.values.iter().enumerate() {
            let mut idx = self.spec.multi_index(i);
            for a in 0..self.spec.dim {
                idx[a] = (idx[a] as isize + shift[a]).rem_euclid(n) as usize;
            }
            out[self.spec.flat_index(&idx)] = v;
        }
        Self::from_parts_unchecked(self.spec.clone(), out)
    }
}

/// Discrete L2 norm: square root of the mean of the squared nodal values.
pub fn discrete_l2_norm(u: &NodalField) -> f64 {
    mean_square(u.values()).sqrt()
}

/// `discrete_l2_norm(u - v)`.
pub fn discrete_l2_dist(u: &NodalField, v: &NodalField) -> Result<f64> {
    u.spec().check_same(v.spec())?;
    Ok(mean_square_diff(u.values(), v.values()).sqrt())
}

/// Physical L2 norm `sqrt(h^d * sum u^2)`, i.e. the discrete norm scaled by the
/// square root of the domain volume. Coincides with [`discrete_l2_norm`] on the
/// unit cube.
pub fn physical_l2_norm(u: &NodalField) -> f64 {
    (u.spec().volume() * mean_square(u.values())).sqrt()
}

pub fn physical_l2_dist(u: &NodalField, v: &NodalField) -> Result<f64> {
    u.spec().check_same(v.spec())?;
    Ok((u.spec().volume() * mean_square_diff(u.values(), v.values())).sqrt())
}

pub(crate) fn mean_square(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

pub(crate) fn mean_square_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
