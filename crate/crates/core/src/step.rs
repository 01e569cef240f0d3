//! Common interface of one-step mean curvature flow maps `U -> V[U]` used as
//! the inner problem of the Willmore scheme.

use crate::error::Result;
use crate::grid::GridSpec;

/// A differentiable map on nodal vectors of a fixed grid.
pub trait McfStep {
    type Linearization<'s>: McfLinearization
    where
        Self: 's;

    fn spec(&self) -> &GridSpec;

    fn step(&self, u: &[f64]) -> Result<Vec<f64>>;

    /// Evaluates the map at `u` and caches what the derivatives need.
    fn linearize(&self, u: &[f64]) -> Result<Self::Linearization<'_>>;
}

pub trait McfLinearization {
    /// `V[U]`.
    fn value(&self) -> &[f64];

    /// `DV[U] P`.
    fn jvp(&self, p: &[f64]) -> Vec<f64>;

    /// `DV[U]^T W`.
    fn vjp(&self, w: &[f64]) -> Vec<f64>;

    /// For fixed `G`, the map `P -> D^2 V[U](P, .)^T G`, the curvature term of
    /// the Hessian of `1/2 |V[U] - U|^2` when `G = V[U] - U`.
    fn curvature(&self, g: &[f64]) -> Box<dyn Fn(&[f64]) -> Vec<f64> + '_>;
}
