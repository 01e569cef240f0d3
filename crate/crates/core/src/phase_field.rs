//! Double-well potential, optimal interface profile, analytic shapes and the
//! interfacial energy of a phase field.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, NodalField};

/// Maximum nesting depth of boolean shape compositions.
pub const MAX_SHAPE_DEPTH: usize = 8;

/// `Psi(v) = 9/16 (1 - v^2)^2`, minimal at `v = +-1`.
pub fn double_well(v: f64) -> f64 {
    let a = 1.0 - v * v;
    0.5625 * a * a
}

pub fn double_well_prime(v: f64) -> f64 {
    -2.25 * v * (1.0 - v * v)
}

pub fn double_well_second(v: f64) -> f64 {
    2.25 * (3.0 * v * v - 1.0)
}

pub fn double_well_third(v: f64) -> f64 {
    13.5 * v
}

/// Optimal one-dimensional profile `tanh(-3 s / (4 eps))` across an interface
/// at signed distance `s` (negative inside).
pub fn optimal_profile(s: f64, eps: f64) -> f64 {
    (-0.75 * s / eps).tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFieldParams {
    pub epsilon: f64,
}

impl PhaseFieldParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon = {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    /// Warns when the interface is resolved by fewer than two cells.
    pub fn check_resolution(&self, spec: &GridSpec) -> bool {
        let ok = self.epsilon >= 2.0 * spec.h() * (1.0 - 1e-12);
        if !ok {
            warn!(
                "epsilon = {} is below 2h = {}; the nested schemes become unstable",
                self.epsilon,
                2.0 * spec.h()
            );
        }
        ok
    }
}

/// Analytic shapes described by signed distance functions (negative inside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Circle in 2D, sphere in 3D.
    Sphere { center: Vec<f64>, radius: f64 },
    /// Axis-aligned box.
    Box { center: Vec<f64>, half_extents: Vec<f64> },
    Cube { center: Vec<f64>, half_width: f64 },
    /// Cylinder whose axis is the last coordinate axis (3D only).
    ThickDisk {
        center: Vec<f64>,
        radius: f64,
        thickness: f64,
    },
    /// Union of one box per axis, each long along that axis.
    Cross {
        center: Vec<f64>,
        arm_length: f64,
        arm_width: f64,
    },
    /// Union of capsules around line segments.
    Tubes { segments: Vec<[Vec<f64>; 2]>, radius: f64 },
    /// `base` with the region of `cut` removed.
    CutCorner { base: Box<Shape>, cut: Box<Shape> },
    Union { shapes: Vec<Shape> },
    Difference { base: Box<Shape>, subtract: Box<Shape> },
    /// Empty set.
    Empty,
}

impl Shape {
    pub fn circle(center: &[f64], radius: f64) -> Self {
        Shape::Sphere {
            center: center.to_vec(),
            radius,
        }
    }

    pub fn rectangle(center: &[f64], half_extents: &[f64]) -> Self {
        Shape::Box {
            center: center.to_vec(),
            half_extents: half_extents.to_vec(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Shape::CutCorner { base, cut } => 1 + base.depth().max(cut.depth()),
            Shape::Difference { base, subtract } => 1 + base.depth().max(subtract.depth()),
            Shape::Union { shapes } => 1 + shapes.iter().map(Shape::depth).max().unwrap_or(0),
            _ => 0,
        }
    }

    /// Checks parameters against the spatial dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.depth() > MAX_SHAPE_DEPTH {
            return Err(Error::InvalidShape(format!(
                "composition depth {} exceeds {MAX_SHAPE_DEPTH}",
                self.depth()
            )));
        }
        let point = |c: &[f64]| -> Result<()> {
            if c.len() != dim {
                return Err(Error::InvalidShape(format!("point {c:?} is not {dim}-dimensional")));
            }
            Ok(())
        };
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidShape(format!("{name} = {v} must be positive")));
            }
            Ok(())
        };
        match self {
            Shape::Sphere { center, radius } => {
                point(center)?;
                positive("radius", *radius)
            }
            Shape::Box { center, half_extents } => {
                point(center)?;
                point(half_extents)?;
                half_extents.iter().try_for_each(|&e| positive("half extent", e))
            }
            Shape::Cube { center, half_width } => {
                point(center)?;
                positive("half width", *half_width)
            }
            Shape::ThickDisk {
                center,
                radius,
                thickness,
            } => {
                if dim != 3 {
                    return Err(Error::InvalidShape("thick disk requires three dimensions".into()));
                }
                point(center)?;
                positive("radius", *radius)?;
                positive("thickness", *thickness)
            }
            Shape::Cross {
                center,
                arm_length,
                arm_width,
            } => {
                point(center)?;
                positive("arm length", *arm_length)?;
                positive("arm width", *arm_width)
            }
            Shape::Tubes { segments, radius } => {
                positive("tube radius", *radius)?;
                segments.iter().try_for_each(|[a, b]| {
                    point(a)?;
                    point(b)
                })
            }
            Shape::CutCorner { base, cut } => {
                base.validate(dim)?;
                cut.validate(dim)
            }
            Shape::Difference { base, subtract } => {
                base.validate(dim)?;
                subtract.validate(dim)
            }
            Shape::Union { shapes } => shapes.iter().try_for_each(|s| s.validate(dim)),
            Shape::Empty => Ok(()),
        }
    }

    /// Signed distance `dist(x, shape) - dist(x, complement)`. Exact for
    /// primitives; boolean compositions use min/max.
    pub fn sdf(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Sphere { center, radius } => norm_diff(x, center) - radius,
            Shape::Box { center, half_extents } => box_sdf(x, center, half_extents),
            Shape::Cube { center, half_width } => {
                let e = vec![*half_width; x.len()];
                box_sdf(x, center, &e)
            }
            Shape::ThickDisk {
                center,
                radius,
                thickness,
            } => {
                let d = x.len();
                let radial = norm_diff(&x[..d - 1], &center[..d - 1]) - radius;
                let axial = (x[d - 1] - center[d - 1]).abs() - 0.5 * thickness;
                let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
                outside + radial.max(axial).min(0.0)
            }
            Shape::Cross {
                center,
                arm_length,
                arm_width,
            } => (0..x.len())
                .map(|axis| {
                    let e: Vec<f64> = (0..x.len())
                        .map(|a| if a == axis { *arm_length } else { 0.5 * arm_width })
                        .collect();
                    box_sdf(x, center, &e)
                })
                .fold(f64::INFINITY, f64::min),
            Shape::Tubes { segments, radius } => segments
                .iter()
                .map(|[a, b]| segment_distance(x, a, b) - radius)
                .fold(f64::INFINITY, f64::min),
            Shape::CutCorner { base, cut } => base.sdf(x).max(-cut.sdf(x)),
            Shape::Difference { base, subtract } => base.sdf(x).max(-subtract.sdf(x)),
            Shape::Union { shapes } => shapes.iter().map(|s| s.sdf(x)).fold(f64::INFINITY, f64::min),
            Shape::Empty => f64::INFINITY,
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`, if bounded.
    pub fn bounds(&self, dim: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let around = |c: &[f64], e: &[f64]| {
            Some((
                c.iter().zip(e).map(|(c, e)| c - e).collect(),
                c.iter().zip(e).map(|(c, e)| c + e).collect(),
            ))
        };
        match self {
            Shape::Sphere { center, radius } => around(center, &vec![*radius; dim]),
            Shape::Box { center, half_extents } => around(center, half_extents),
            Shape::Cube { center, half_width } => around(center, &vec![*half_width; dim]),
            Shape::ThickDisk {
                center,
                radius,
                thickness,
            } => {
                let mut e = vec![*radius; dim];
                e[dim - 1] = 0.5 * thickness;
                around(center, &e)
            }
            Shape::Cross { center, arm_length, .. } => around(center, &vec![*arm_length; dim]),
            Shape::Tubes { segments, radius } => {
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                for [a, b] in segments {
                    for k in 0..dim {
                        lo[k] = lo[k].min(a[k].min(b[k]) - radius);
                        hi[k] = hi[k].max(a[k].max(b[k]) + radius);
                    }
                }
                if segments.is_empty() { None } else { Some((lo, hi)) }
            }
            Shape::CutCorner { base, .. } | Shape::Difference { base, .. } => base.bounds(dim),
            Shape::Union { shapes } => shapes.iter().filter_map(|s| s.bounds(dim)).reduce(|(al, ah), (bl, bh)| {
                (
                    al.iter().zip(&bl).map(|(a, b)| a.min(*b)).collect(),
                    ah.iter().zip(&bh).map(|(a, b)| a.max(*b)).collect(),
                )
            }),
            Shape::Empty => None,
        }
    }
}

fn norm_diff(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn box_sdf(x: &[f64], center: &[f64], half: &[f64]) -> f64 {
    let mut outside = 0.0;
    let mut inside = f64::NEG_INFINITY;
    for k in 0..x.len() {
        let q = (x[k] - center[k]).abs() - half[k];
        outside += q.max(0.0).powi(2);
        inside = inside.max(q);
    }
    outside.sqrt() + inside.min(0.0)
}

fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(b, a)| b - a).collect();
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 > 0.0 {
        (x.iter().zip(a).zip(&ab).map(|((x, a), d)| (x - a) * d).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    x.iter()
        .zip(a)
        .zip(&ab)
        .map(|((x, a), d)| {
            let p = a + t * d;
            (x - p) * (x - p)
        })
        .sum::<f64>()
        .sqrt()
}

/// Signed distance of `x` to `shape`.
pub fn shape_sdf(shape: &Shape, x: &[f64]) -> f64 {
    shape.sdf(x)
}

/// Nodal phase field `tanh(-3 sdist / (4 eps))` of a shape: +1 inside, -1 outside.
pub fn phase_field_from_shape(spec: &GridSpec, shape: &Shape, eps: f64) -> Result<NodalField> {
    PhaseFieldParams::new(eps)?;
    shape.validate(spec.dim())?;
    if let Some((lo, hi)) = shape.bounds(spec.dim()) {
        let margin = 3.0 * eps;
        let fits = (0..spec.dim())
            .all(|k| lo[k] - margin >= spec.origin()[k] && hi[k] + margin <= spec.origin()[k] + spec.edge_length());
        if !fits {
            warn!("shape does not fit inside the domain with margin 3 eps");
        }
    }
    Ok(NodalField::from_fn(spec.clone(), |x| optimal_profile(shape.sdf(x), eps)))
}

/// `tanh(3 (r - |x - center|) / (4 eps))` at every node.
pub fn sphere_phase_field(spec: &GridSpec, radius: f64, center: &[f64], eps: f64) -> Result<NodalField> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius = {radius} must be positive")));
    }
    PhaseFieldParams::new(eps)?;
    if center.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: center.len(),
        });
    }
    let scale = 0.75 / eps;
    Ok(NodalField::from_fn(spec.clone(), |x| {
        (scale * (radius - norm_diff(x, center))).tanh()
    }))
}

/// Forward-difference periodic Laplacian (the standard `2d+1` point stencil).
pub(crate) fn laplacian(spec: &GridSpec, u: &[f64]) -> Vec<f64> {
    let n = spec.n();
    let d = spec.dim();
    let inv_h2 = 1.0 / (spec.h() * spec.h());
    let mut out: Vec<f64> = u.iter().map(|&v| -2.0 * d as f64 * v).collect();
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        for (i, o) in out.iter_mut().enumerate() {
            let k = (i / stride) % n;
            let up = if k + 1 == n { i + stride - n * stride } else { i + stride };
            let down = if k == 0 { i + n * stride - stride } else { i - stride };
            *o += u[up] + u[down];
        }
    }
    out.iter_mut().for_each(|v| *v *= inv_h2);
    out
}

/// Interfacial energy `1/2 sum h^d (eps |D+U|^2 + Psi(U)/eps)` with periodic
/// forward differences.
pub fn perimeter_energy(u: &NodalField, eps: f64) -> f64 {
    let spec = u.spec();
    let n = spec.n();
    let d = spec.dim();
    let h = spec.h();
    let vals = u.values();
    let mut grad2 = 0.0;
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        for (i, &v) in vals.iter().enumerate() {
            let k = (i / stride) % n;
            let up = if k + 1 == n { i + stride - n * stride } else { i + stride };
            let diff = (vals[up] - v) / h;
            grad2 += diff * diff;
        }
    }
    let potential: f64 = vals.iter().map(|&v| double_well(v)).sum();
    0.5 * spec.cell_volume() * (eps * grad2 + potential / eps)
}

/// Gradient of [`perimeter_energy`] with respect to the nodal values.
pub fn perimeter_gradient(u: &NodalField, eps: f64) -> NodalField {
    let spec = u.spec();
    let lap = laplacian(spec, u.values());
    let hd = spec.cell_volume();
    let g = lap
        .iter()
        .zip(u.values())
        .map(|(l, &v)| hd * (-eps * l + double_well_prime(v) / (2.0 * eps)))
        .collect();
    NodalField::from_parts_unchecked(spec.clone(), g)
}
