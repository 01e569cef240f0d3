//! Minimizing-movement scheme for phase-field Willmore flow
//! `U^(k+1) = argmin eps |U - U^k|^2 + (tau eps / tau_tilde^2) |V[U] - U|^2`
//! with `V` a one-step mean curvature flow map, solved by Newton-CG with
//! Armijo backtracking.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, NodalField};
use crate::linalg::{CgExit, axpy, conjugate_gradient, dot};
use crate::neural::NeuralMcfOperator;
use crate::phase_field::Shape;
use crate::step::{McfLinearization, McfStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// Exact Hessian including second derivatives of the inner step.
    #[default]
    Full,
    /// Drops the second derivatives of the inner step.
    GaussNewton,
}

/// Free degrees of freedom: `true` inside the restoration region.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    spec: GridSpec,
    free: Vec<bool>,
}

impl Mask {
    pub fn new(spec: GridSpec, free: Vec<bool>) -> Result<Self> {
        if free.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "mask with {} entries for a grid with {} nodes",
                free.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, free })
    }

    pub fn all(spec: GridSpec, free: bool) -> Self {
        let free = vec![free; spec.len()];
        Self { spec, free }
    }

    /// Nodes where `field > 0.5` are free.
    pub fn from_field(field: &NodalField) -> Self {
        Self {
            spec: field.spec().clone(),
            free: field.values().iter().map(|&v| v > 0.5).collect(),
        }
    }

    /// Nodes inside `shape` (signed distance `<= 0`) are free.
    pub fn from_shape(spec: &GridSpec, shape: &Shape) -> Result<Self> {
        shape.validate(spec.dim())?;
        let d = spec.dim();
        let free = (0..spec.len())
            .map(|i| shape.sdf(&spec.coordinates(i)[..d]) <= 0.0)
            .collect();
        Ok(Self {
            spec: spec.clone(),
            free,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn count_free(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    pub fn to_field(&self) -> NodalField {
        let values = self.free.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        NodalField::from_parts_unchecked(self.spec.clone(), values)
    }

    fn project(&self, v: &mut [f64]) {
        v.iter_mut().zip(&self.free).for_each(|(v, &f)| {
            if !f {
                *v = 0.0;
            }
        });
    }
}

/// Entries of `update` inside the mask, bit-exact copies of `previous` elsewhere.
pub fn apply_mask_constraint(update: &NodalField, previous: &NodalField, mask: &Mask) -> Result<NodalField> {
    update.spec().check_same(previous.spec())?;
    update.spec().check_same(mask.spec())?;
    let mut out = update.values().to_vec();
    copy_fixed(&mut out, previous.values(), Some(mask));
    Ok(NodalField::from_parts_unchecked(update.spec().clone(), out))
}

fn copy_fixed(out: &mut [f64], previous: &[f64], mask: Option<&Mask>) {
    if let Some(mask) = mask {
        for ((o, p), &f) in out.iter_mut().zip(previous).zip(&mask.free) {
            if !f {
                *o = *p;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WillmoreConfig {
    pub tau: f64,
    pub tau_tilde: f64,
    pub eps: f64,
    /// Stop when the RMS of the energy gradient, taken per unit norm weight,
    /// falls below this.
    pub newton_grad_tol: f64,
    pub newton_max_iter: usize,
    pub cg_rel_tol: f64,
    pub cg_max_iter: usize,
    pub armijo_slope: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub hessian_mode: HessianMode,
    /// Scale CG by the inverse of the distance term's diagonal `2 eps w`.
    pub jacobi_preconditioner: bool,
    pub mask: Option<Mask>,
}

impl WillmoreConfig {
    pub fn new(tau: f64, tau_tilde: f64, eps: f64) -> Result<Self> {
        let cfg = Self {
            tau,
            tau_tilde,
            eps,
            newton_grad_tol: 1e-8,
            newton_max_iter: 50,
            cg_rel_tol: 1e-6,
            cg_max_iter: 500,
            armijo_slope: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            hessian_mode: HessianMode::Full,
            jacobi_preconditioner: false,
            mask: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.tau, self.tau_tilde, self.eps, self.newton_grad_tol, self.cg_rel_tol, self.armijo_slope];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(
                "tau, tau_tilde, eps and tolerances must be positive".into(),
            ));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) || self.armijo_slope >= 1.0 {
            return Err(Error::InvalidParameter("line search factors must lie in (0, 1)".into()));
        }
        if self.newton_max_iter == 0 || self.cg_max_iter == 0 {
            return Err(Error::InvalidParameter("iteration budgets must be positive".into()));
        }
        Ok(())
    }

    /// Weight of the inner-step residual term, `tau eps / tau_tilde^2`.
    fn residual_weight(&self) -> f64 {
        self.tau * self.eps / (self.tau_tilde * self.tau_tilde)
    }

    fn check_mask(&self, spec: &GridSpec) -> Result<()> {
        match &self.mask {
            Some(m) => spec.check_same(m.spec()),
            None => Ok(()),
        }
    }
}

/// The outer energy for one time step, generic over the inner step.
pub struct WillmoreProblem<'a, S: McfStep> {
    step: &'a S,
    cfg: &'a WillmoreConfig,
    previous: &'a [f64],
    // norm weight n^-d
    w: f64,
}

impl<'a, S: McfStep> WillmoreProblem<'a, S> {
    pub fn new(step: &'a S, cfg: &'a WillmoreConfig, previous: &'a [f64]) -> Result<Self> {
        cfg.validate()?;
        let spec = step.spec();
        if previous.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid with {} nodes",
                previous.len(),
                spec.len()
            )));
        }
        cfg.check_mask(spec)?;
        Ok(Self {
            step,
            cfg,
            previous,
            w: 1.0 / spec.len() as f64,
        })
    }

    fn distance_sq(&self, u: &[f64]) -> f64 {
        self.w * u.iter().zip(self.previous).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn residual_sq(&self, v: &[f64], u: &[f64]) -> f64 {
        self.w * v.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    /// `E = eps |U - U^k|^2 + (tau eps / tau_tilde^2) |V[U] - U|^2`.
    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        let v = self.step.step(u)?;
        Ok(self.energy_from(u, &v))
    }

    fn energy_from(&self, u: &[f64], v: &[f64]) -> f64 {
        self.cfg.eps * self.distance_sq(u) + self.cfg.residual_weight() * self.residual_sq(v, u)
    }

    /// `W_h = eps / (2 tau_tilde^2) |V[U] - U|^2`.
    pub fn willmore_proxy(&self, u: &[f64]) -> Result<f64> {
        let v = self.step.step(u)?;
        Ok(self.proxy_from(u, &v))
    }

    fn proxy_from(&self, u: &[f64], v: &[f64]) -> f64 {
        self.cfg.eps / (2.0 * self.cfg.tau_tilde * self.cfg.tau_tilde) * self.residual_sq(v, u)
    }

    /// `G = V[U] - U`.
    fn inner_residual(lin: &S::Linearization<'_>, u: &[f64]) -> Vec<f64> {
        lin.value().iter().zip(u).map(|(v, u)| v - u).collect()
    }

    /// Energy gradient at the linearization point `u`, zero outside the mask.
    pub fn gradient(&self, u: &[f64], lin: &S::Linearization<'_>) -> Vec<f64> {
        let g = Self::inner_residual(lin, u);
        let vjp = lin.vjp(&g);
        let a = 2.0 * self.cfg.eps * self.w;
        let b = 2.0 * self.cfg.residual_weight() * self.w;
        let mut grad: Vec<f64> = u
            .iter()
            .zip(self.previous)
            .zip(vjp.iter().zip(&g))
            .map(|((u, p), (j, g))| a * (u - p) + b * (j - g))
            .collect();
        if let Some(m) = &self.cfg.mask {
            m.project(&mut grad);
        }
        grad
    }

    /// Hessian-vector product operator at the linearization point `u`.
    ///
    /// With a mask the operator is the projected Hessian on free nodes and
    /// the identity on fixed ones.
    pub fn hessian<'s>(
        &'s self,
        u: &[f64],
        lin: &'s S::Linearization<'_>,
        mode: HessianMode,
    ) -> impl Fn(&[f64]) -> Vec<f64> + 's {
        let g = Self::inner_residual(lin, u);
        let curvature = match mode {
            HessianMode::Full => Some(lin.curvature(&g)),
            HessianMode::GaussNewton => None,
        };
        let a = 2.0 * self.cfg.eps * self.w;
        let b = 2.0 * self.cfg.residual_weight() * self.w;
        let mask = self.cfg.mask.as_ref();
        move |p: &[f64]| {
            let mut pp = p.to_vec();
            if let Some(m) = mask {
                m.project(&mut pp);
            }
            // (DV - I)^T (DV - I) P
            let mut q = lin.jvp(&pp);
            q.iter_mut().zip(&pp).for_each(|(q, p)| *q -= p);
            let mut hp = lin.vjp(&q);
            hp.iter_mut().zip(&q).for_each(|(h, q)| *h -= q);
            if let Some(c) = &curvature {
                let extra = c(&pp);
                hp.iter_mut().zip(&extra).for_each(|(h, e)| *h += e);
            }
            let mut out: Vec<f64> = hp.iter().zip(&pp).map(|(h, p)| b * h + a * p).collect();
            if let Some(m) = mask {
                for ((o, p), &f) in out.iter_mut().zip(p).zip(&m.free) {
                    if !f {
                        *o = *p;
                    }
                }
            }
            out
        }
    }

    // RMS of the gradient divided by the norm weight
    fn gradient_norm(&self, grad: &[f64]) -> f64 {
        (dot(grad, grad) * self.w).sqrt() / self.w
    }

    /// Newton-CG from `U = U^k`.
    pub fn minimize(&self) -> Result<(Vec<f64>, StepDiagnostics)> {
        let cfg = self.cfg;
        let mut u = self.previous.to_vec();
        let mut diag = StepDiagnostics::default();
        let mut energy = f64::NAN;
        for it in 0..=cfg.newton_max_iter {
            let lin = self.step.linearize(&u)?;
            energy = self.energy_from(&u, lin.value());
            if it == 0 {
                diag.initial_energy = energy;
            }
            let grad = self.gradient(&u, &lin);
            diag.gradient_norm = self.gradient_norm(&grad);
            if !energy.is_finite() || !diag.gradient_norm.is_finite() {
                return Err(Error::NonFinite("Willmore energy"));
            }
            if diag.gradient_norm <= cfg.newton_grad_tol {
                diag.converged = true;
                break;
            }
            if it == cfg.newton_max_iter {
                break;
            }
            let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
            let jacobi_scale = 1.0 / (2.0 * cfg.eps * self.w);
            let jacobi = move |r: &[f64]| r.iter().map(|v| v * jacobi_scale).collect::<Vec<_>>();
            let pre: Option<&dyn Fn(&[f64]) -> Vec<f64>> = if cfg.jacobi_preconditioner { Some(&jacobi) } else { None };
            let mut out = {
                let h = self.hessian(&u, &lin, cfg.hessian_mode);
                conjugate_gradient(h, &neg_grad, pre, cfg.cg_rel_tol, cfg.cg_max_iter)
            };
            diag.cg_iterations += out.iterations;
            if out.exit == CgExit::NegativeCurvature && cfg.hessian_mode == HessianMode::Full {
                diag.gauss_newton_fallbacks += 1;
                let h = self.hessian(&u, &lin, HessianMode::GaussNewton);
                out = conjugate_gradient(h, &neg_grad, pre, cfg.cg_rel_tol, cfg.cg_max_iter);
                diag.cg_iterations += out.iterations;
            }
            let mut dir = out.x;
            let mut slope = dot(&grad, &dir);
            if !(slope < 0.0) {
                dir = neg_grad;
                slope = dot(&grad, &dir);
            }
            drop(lin);
            let mut alpha = 1.0;
            let mut accepted = None;
            let mut trial = u.clone();
            for _ in 0..=cfg.max_backtracks {
                trial.copy_from_slice(&u);
                axpy(alpha, &dir, &mut trial);
                copy_fixed(&mut trial, &u, cfg.mask.as_ref());
                let e = self.energy(&trial)?;
                if e <= energy + cfg.armijo_slope * alpha * slope {
                    accepted = Some(e);
                    break;
                }
                diag.backtracks += 1;
                alpha *= cfg.backtrack_factor;
            }
            match accepted {
                Some(e) => {
                    diag.armijo_records.push(ArmijoRecord {
                        energy_before: energy,
                        energy_after: e,
                        step_length: alpha,
                        slope,
                    });
                    u.copy_from_slice(&trial);
                    diag.newton_iterations += 1;
                }
                None => {
                    diag.line_search_failed = true;
                    break;
                }
            }
        }
        diag.final_energy = if diag.armijo_records.is_empty() {
            diag.initial_energy
        } else {
            diag.armijo_records.last().unwrap().energy_after
        };
        let _ = energy;
        Ok((u, diag))
    }
}

/// One accepted line-search step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmijoRecord {
    pub energy_before: f64,
    pub energy_after: f64,
    pub step_length: f64,
    /// Directional derivative of the energy along the search direction.
    pub slope: f64,
}

impl ArmijoRecord {
    pub fn satisfies(&self, c: f64) -> bool {
        self.energy_after <= self.energy_before + c * self.step_length * self.slope
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    pub newton_iterations: usize,
    pub cg_iterations: usize,
    pub backtracks: usize,
    pub gauss_newton_fallbacks: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    /// No sufficient decrease within the backtracking budget; the best iterate is returned.
    pub line_search_failed: bool,
    pub armijo_records: Vec<ArmijoRecord>,
}

/// One time step of the scheme with inner step `step`.
pub fn newton_cg_step_with<S: McfStep>(
    u_prev: &NodalField,
    step: &S,
    cfg: &WillmoreConfig,
) -> Result<(NodalField, StepDiagnostics)> {
    u_prev.spec().check_same(step.spec())?;
    let problem = WillmoreProblem::new(step, cfg, u_prev.values())?;
    let (u, diag) = problem.minimize()?;
    Ok((NodalField::new(u_prev.spec().clone(), u)?, diag))
}

/// One time step with the learned inner operator.
pub fn newton_cg_step(
    u_prev: &NodalField,
    op: &NeuralMcfOperator,
    cfg: &WillmoreConfig,
) -> Result<(NodalField, StepDiagnostics)> {
    let bound = op.bind(u_prev.spec())?;
    newton_cg_step_with(u_prev, &bound, cfg)
}

/// `E[U^k, U]` with the learned inner operator.
pub fn outer_energy(u_prev: &NodalField, u: &NodalField, op: &NeuralMcfOperator, cfg: &WillmoreConfig) -> Result<f64> {
    u_prev.spec().check_same(u.spec())?;
    let bound = op.bind(u.spec())?;
    WillmoreProblem::new(&bound, cfg, u_prev.values())?.energy(u.values())
}

/// `W_h[U] = eps / (2 tau_tilde^2) |V[U] - U|^2`.
pub fn willmore_proxy(u: &NodalField, op: &NeuralMcfOperator, cfg: &WillmoreConfig) -> Result<f64> {
    let bound = op.bind(u.spec())?;
    WillmoreProblem::new(&bound, cfg, u.values())?.willmore_proxy(u.values())
}

pub fn outer_gradient(
    u_prev: &NodalField,
    u: &NodalField,
    op: &NeuralMcfOperator,
    cfg: &WillmoreConfig,
) -> Result<NodalField> {
    u_prev.spec().check_same(u.spec())?;
    let bound = op.bind(u.spec())?;
    let problem = WillmoreProblem::new(&bound, cfg, u_prev.values())?;
    let lin = bound.linearize(u.values())?;
    u.with_values(problem.gradient(u.values(), &lin))
}

pub fn outer_hvp(
    u_prev: &NodalField,
    u: &NodalField,
    p: &NodalField,
    op: &NeuralMcfOperator,
    cfg: &WillmoreConfig,
) -> Result<NodalField> {
    u_prev.spec().check_same(u.spec())?;
    u.spec().check_same(p.spec())?;
    let bound = op.bind(u.spec())?;
    let problem = WillmoreProblem::new(&bound, cfg, u_prev.values())?;
    let lin = bound.linearize(u.values())?;
    let h = problem.hessian(u.values(), &lin, cfg.hessian_mode);
    p.with_values(h(p.values()))
}

/// Per-step record of a flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub step: usize,
    /// `E[U^(k-1), U^k]` (zero for the initial state).
    pub energy: f64,
    pub willmore_proxy: f64,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
    pub line_search_failed: bool,
    pub elapsed_seconds: f64,
    /// FNV-1a hash of the field's bit pattern.
    pub checksum: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    pub step_diagnostics: Vec<StepDiagnostics>,
}

pub fn field_checksum(values: &[f64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

/// Runs `steps` time steps from `u0`, calling `sink` with every record and
/// state (including the initial one).
pub fn run_flow_with<S: McfStep>(
    u0: &NodalField,
    steps: usize,
    step: &S,
    cfg: &WillmoreConfig,
    mut sink: impl FnMut(&FlowRecord, &NodalField) -> Result<()>,
) -> Result<FlowTrajectory> {
    u0.spec().check_same(step.spec())?;
    let start = Instant::now();
    let mut trajectory = FlowTrajectory::default();
    let proxy = WillmoreProblem::new(step, cfg, u0.values())?.willmore_proxy(u0.values())?;
    let first = FlowRecord {
        step: 0,
        energy: 0.0,
        willmore_proxy: proxy,
        newton_iterations: 0,
        cg_iterations: 0,
        line_search_failed: false,
        elapsed_seconds: 0.0,
        checksum: field_checksum(u0.values()),
    };
    sink(&first, u0)?;
    trajectory.records.push(first);
    let mut u = u0.clone();
    for k in 1..=steps {
        let wrap = |e: Error| Error::FlowStep {
            step: k,
            source: Box::new(e),
        };
        let (next, diag) = newton_cg_step_with(&u, step, cfg).map_err(wrap)?;
        let proxy = WillmoreProblem::new(step, cfg, next.values())
            .and_then(|p| p.willmore_proxy(next.values()))
            .map_err(wrap)?;
        let record = FlowRecord {
            step: k,
            energy: diag.final_energy,
            willmore_proxy: proxy,
            newton_iterations: diag.newton_iterations,
            cg_iterations: diag.cg_iterations,
            line_search_failed: diag.line_search_failed,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            checksum: field_checksum(next.values()),
        };
        sink(&record, &next)?;
        trajectory.records.push(record);
        trajectory.step_diagnostics.push(diag);
        u = next;
    }
    Ok(trajectory)
}

/// [`run_flow_with`] using the learned inner operator.
pub fn run_flow(
    u0: &NodalField,
    steps: usize,
    op: &NeuralMcfOperator,
    cfg: &WillmoreConfig,
    sink: impl FnMut(&FlowRecord, &NodalField) -> Result<()>,
) -> Result<FlowTrajectory> {
    let bound = op.bind(u0.spec())?;
    run_flow_with(u0, steps, &bound, cfg, sink)
}
