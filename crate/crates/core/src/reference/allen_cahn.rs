use log::warn;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, NodalField, PeriodicFft};
use crate::linalg::{CgExit, axpy, conjugate_gradient, dot};
use crate::phase_field::{double_well, double_well_prime, double_well_second, double_well_third, laplacian};
use crate::step::{McfLinearization, McfStep};

/// Parameters shared by the Allen-Cahn time steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllenCahnStepConfig {
    pub eps: f64,
    pub tau_tilde: f64,
    /// Relative residual target of inner linear solves.
    pub linear_tol: f64,
    /// Target for the discrete L2 norm of the implicit step's optimality residual.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl AllenCahnStepConfig {
    pub fn new(eps: f64, tau_tilde: f64) -> Result<Self> {
        let cfg = Self {
            eps,
            tau_tilde,
            linear_tol: 1e-12,
            newton_tol: 1e-9,
            newton_max_iter: 50,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) || !(self.tau_tilde >= 0.0 && self.tau_tilde.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eps = {}, tau_tilde = {}",
                self.eps, self.tau_tilde
            )));
        }
        if !(self.linear_tol > 0.0) || !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        if !self.is_monotone() {
            warn!(
                "tau_tilde/eps^2 = {} >= 8/9: the soft threshold is not monotone",
                self.ratio()
            );
        }
        Ok(())
    }

    /// `tau_tilde / eps^2`.
    pub fn ratio(&self) -> f64 {
        self.tau_tilde / (self.eps * self.eps)
    }

    pub fn is_monotone(&self) -> bool {
        self.ratio() < 8.0 / 9.0
    }

    // coefficient of Psi' in the step equations
    fn c(&self) -> f64 {
        self.tau_tilde / (2.0 * self.eps * self.eps)
    }
}

/// Soft threshold `phi(u) = u + tau_tilde/(2 eps^2) Psi'(u)`.
pub fn soft_threshold(u: f64, cfg: &AllenCahnStepConfig) -> f64 {
    u + cfg.c() * double_well_prime(u)
}

// u - tau_tilde/(2 eps^2) Psi'(u)
fn explicit_reaction(u: f64, cfg: &AllenCahnStepConfig) -> f64 {
    u - cfg.c() * double_well_prime(u)
}

/// The `u` with `phi(u) = y`, by bracketed Newton iterated to round-off.
pub fn soft_threshold_inverse(y: f64, cfg: &AllenCahnStepConfig) -> Result<f64> {
    if !cfg.is_monotone() {
        return Err(Error::NotMonotone { ratio: cfg.ratio() });
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("soft threshold argument"));
    }
    let c = cfg.c();
    // phi(u) = a u + b u^3 with a > 0, b >= 0; solve for |y| and use oddness
    let a = 1.0 - 2.25 * c;
    let target = y.abs();
    let (mut lo, mut hi) = (0.0, target / a);
    let mut u = target.min(hi);
    for _ in 0..200 {
        let f = soft_threshold(u, cfg) - target;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let slope = 1.0 + c * double_well_second(u);
        let mut next = u - f / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == u || hi - lo <= f64::EPSILON * hi {
            u = next;
            break;
        }
        u = next;
    }
    let residual = (soft_threshold(u, cfg) - target).abs();
    if residual > 1e-12 * target.max(1.0) {
        return Err(Error::NewtonNotConverged {
            iterations: 200,
            residual,
        });
    }
    Ok(u.copysign(y))
}

/// Fourier-diagonal solves and multipliers on one periodic grid.
#[derive(Debug, Clone)]
pub struct SpectralSolver {
    spec: GridSpec,
    fft: PeriodicFft,
    // eigenvalues of -Delta_h
    neg_laplacian: Vec<f64>,
    // |xi|^2 with physical angular frequencies
    frequency_sq: Vec<f64>,
}

impl SpectralSolver {
    pub fn new(spec: &GridSpec) -> Self {
        let fft = PeriodicFft::new(spec);
        let n = spec.n() as f64;
        let h = spec.h();
        let two_pi = 2.0 * std::f64::consts::PI;
        let neg_laplacian = fft.multiplier(spec, |k| {
            k.iter()
                .map(|&k| (2.0 - 2.0 * (two_pi * k as f64 / n).cos()) / (h * h))
                .sum()
        });
        let frequency_sq = fft.multiplier(spec, |k| {
            k.iter()
                .map(|&k| {
                    let xi = two_pi * fft.signed_frequency(k) as f64 / spec.edge_length();
                    xi * xi
                })
                .sum()
        });
        Self {
            spec: spec.clone(),
            fft,
            neg_laplacian,
            frequency_sq,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn apply_multiplier(&self, u: &[f64], m: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut hat: Vec<Complex64> = self.fft.forward_real(u);
        hat.iter_mut().enumerate().for_each(|(i, z)| *z *= m(i));
        self.fft.inverse_real(hat)
    }

    /// Solves `((1 + shift) I - tau Delta_h) v = f`.
    pub fn solve_shifted(&self, f: &[f64], tau: f64, shift: f64) -> Vec<f64> {
        self.apply_multiplier(f, |i| 1.0 / (1.0 + shift + tau * self.neg_laplacian[i]))
    }

    /// `exp(tau Delta) u` with the continuous Laplacian's symbol.
    pub fn heat(&self, u: &[f64], tau: f64) -> Vec<f64> {
        self.apply_multiplier(u, |i| (-tau * self.frequency_sq[i]).exp())
    }
}

fn check_grid(solver: &SpectralSolver, u: &[f64]) -> Result<()> {
    if u.len() != solver.spec.len() {
        return Err(Error::GridMismatch(format!(
            "{} values for a grid with {} nodes",
            u.len(),
            solver.spec.len()
        )));
    }
    Ok(())
}

/// `(I - tau_tilde Delta_h) v = u - tau_tilde/(2 eps^2) Psi'(u)`, solved spectrally.
#[derive(Debug, Clone)]
pub struct SemiImplicitStep {
    cfg: AllenCahnStepConfig,
    solver: SpectralSolver,
}

impl SemiImplicitStep {
    pub fn new(spec: &GridSpec, cfg: AllenCahnStepConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            solver: SpectralSolver::new(spec),
        })
    }
}

pub struct SemiImplicitLinearization<'a> {
    step: &'a SemiImplicitStep,
    value: Vec<f64>,
    // first and second derivative of the explicit reaction term
    phi1: Vec<f64>,
    phi2: Vec<f64>,
}

impl McfStep for SemiImplicitStep {
    type Linearization<'s> = SemiImplicitLinearization<'s>;

    fn spec(&self) -> &GridSpec {
        &self.solver.spec
    }

    fn step(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_grid(&self.solver, u)?;
        let rhs: Vec<f64> = u.iter().map(|&v| explicit_reaction(v, &self.cfg)).collect();
        Ok(self.solver.solve_shifted(&rhs, self.cfg.tau_tilde, 0.0))
    }

    fn linearize(&self, u: &[f64]) -> Result<SemiImplicitLinearization<'_>> {
        let value = self.step(u)?;
        let c = self.cfg.c();
        Ok(SemiImplicitLinearization {
            step: self,
            value,
            phi1: u.iter().map(|&v| 1.0 - c * double_well_second(v)).collect(),
            phi2: u.iter().map(|&v| -c * double_well_third(v)).collect(),
        })
    }
}

impl SemiImplicitLinearization<'_> {
    fn solve(&self, f: &[f64]) -> Vec<f64> {
        self.step.solver.solve_shifted(f, self.step.cfg.tau_tilde, 0.0)
    }
}

impl McfLinearization for SemiImplicitLinearization<'_> {
    fn value(&self) -> &[f64] {
        &self.value
    }

    fn jvp(&self, p: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = p.iter().zip(&self.phi1).map(|(p, d)| p * d).collect();
        self.solve(&f)
    }

    fn vjp(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.solve(w);
        x.iter_mut().zip(&self.phi1).for_each(|(x, d)| *x *= d);
        x
    }

    fn curvature(&self, g: &[f64]) -> Box<dyn Fn(&[f64]) -> Vec<f64> + '_> {
        let weights: Vec<f64> = self.solve(g).iter().zip(&self.phi2).map(|(a, b)| a * b).collect();
        Box::new(move |p| p.iter().zip(&weights).map(|(p, w)| p * w).collect())
    }
}

/// Minimizer of `eps |U - V|^2 + 2 tau_tilde P[V]` by Newton with Armijo
/// backtracking; linear systems by CG preconditioned with a spectral solve.
#[derive(Debug, Clone)]
pub struct ImplicitStep {
    cfg: AllenCahnStepConfig,
    solver: SpectralSolver,
}

/// Result of one implicit step.
#[derive(Debug, Clone)]
pub struct ImplicitOutcome {
    pub value: Vec<f64>,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
    pub residual: f64,
}

impl ImplicitStep {
    pub fn new(spec: &GridSpec, cfg: AllenCahnStepConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            solver: SpectralSolver::new(spec),
        })
    }

    pub fn config(&self) -> &AllenCahnStepConfig {
        &self.cfg
    }

    // V - U - tau Delta V + c Psi'(V)
    fn residual(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let lap = laplacian(&self.solver.spec, v);
        let (tau, c) = (self.cfg.tau_tilde, self.cfg.c());
        v.iter()
            .zip(u)
            .zip(&lap)
            .map(|((&v, &u), &l)| v - u - tau * l + c * double_well_prime(v))
            .collect()
    }

    // objective scaled so that its gradient is `residual`
    fn objective(&self, u: &[f64], v: &[f64]) -> f64 {
        let lap = laplacian(&self.solver.spec, v);
        let (tau, c) = (self.cfg.tau_tilde, self.cfg.c());
        v.iter()
            .zip(u)
            .zip(&lap)
            .map(|((&v, &u), &l)| 0.5 * (v - u) * (v - u) - 0.5 * tau * v * l + c * double_well(v))
            .sum()
    }

    fn hessian(&self, v: &[f64]) -> Vec<f64> {
        let c = self.cfg.c();
        v.iter().map(|&v| 1.0 + c * double_well_second(v)).collect()
    }

    // far from the interface Psi'' = 9/2, which makes this preconditioner nearly exact there
    fn preconditioner(&self) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        let shift = 4.5 * self.cfg.c();
        move |r: &[f64]| self.solver.solve_shifted(r, self.cfg.tau_tilde, shift)
    }

    fn apply_hessian(&self, diag: &[f64], p: &[f64]) -> Vec<f64> {
        let lap = laplacian(&self.solver.spec, p);
        let tau = self.cfg.tau_tilde;
        p.iter().zip(diag).zip(&lap).map(|((p, d), l)| d * p - tau * l).collect()
    }

    fn solve_hessian(&self, diag: &[f64], b: &[f64]) -> (Vec<f64>, usize) {
        let pre = self.preconditioner();
        let out = conjugate_gradient(|p| self.apply_hessian(diag, p), b, Some(&pre), self.cfg.linear_tol, 1000);
        (out.x, out.iterations)
    }

    pub fn solve(&self, u: &[f64]) -> Result<ImplicitOutcome> {
        check_grid(&self.solver, u)?;
        let rhs: Vec<f64> = u.iter().map(|&v| explicit_reaction(v, &self.cfg)).collect();
        let mut v = self.solver.solve_shifted(&rhs, self.cfg.tau_tilde, 0.0);
        let mut cg_iterations = 0;
        let scale = 1.0 / (u.len() as f64).sqrt();
        for it in 0..=self.cfg.newton_max_iter {
            let r = self.residual(u, &v);
            let res = scale * dot(&r, &r).sqrt();
            if !res.is_finite() {
                return Err(Error::NonFinite("implicit step residual"));
            }
            if res <= self.cfg.newton_tol {
                return Ok(ImplicitOutcome {
                    value: v,
                    newton_iterations: it,
                    cg_iterations,
                    residual: res,
                });
            }
            if it == self.cfg.newton_max_iter {
                return Err(Error::NewtonNotConverged {
                    iterations: it,
                    residual: res,
                });
            }
            let diag = self.hessian(&v);
            let pre = self.preconditioner();
            let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
            let out = conjugate_gradient(
                |p| self.apply_hessian(&diag, p),
                &neg_r,
                Some(&pre),
                self.cfg.linear_tol.max(1e-3 * res.min(1.0)).min(1e-2),
                1000,
            );
            cg_iterations += out.iterations;
            let mut dir = out.x;
            let mut slope = dot(&r, &dir);
            if out.exit == CgExit::NegativeCurvature || !(slope < 0.0) {
                dir = neg_r;
                slope = dot(&r, &dir);
            }
            let j0 = self.objective(u, &v);
            let mut alpha = 1.0;
            let mut trial = v.clone();
            loop {
                trial.copy_from_slice(&v);
                axpy(alpha, &dir, &mut trial);
                // near the solution round-off dominates the objective difference
                if self.objective(u, &trial) <= j0 + 1e-4 * alpha * slope || alpha < 1e-10 || res < 1e-6 {
                    break;
                }
                alpha *= 0.5;
            }
            v = trial;
        }
        unreachable!()
    }
}

pub struct ImplicitLinearization<'a> {
    step: &'a ImplicitStep,
    value: Vec<f64>,
    diag: Vec<f64>,
    psi3: Vec<f64>,
}

impl McfStep for ImplicitStep {
    type Linearization<'s> = ImplicitLinearization<'s>;

    fn spec(&self) -> &GridSpec {
        &self.solver.spec
    }

    fn step(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve(u)?.value)
    }

    fn linearize(&self, u: &[f64]) -> Result<ImplicitLinearization<'_>> {
        let value = self.solve(u)?.value;
        let c = self.cfg.c();
        Ok(ImplicitLinearization {
            step: self,
            diag: self.hessian(&value),
            psi3: value.iter().map(|&v| c * double_well_third(v)).collect(),
            value,
        })
    }
}

// V solves M(V) = U with M(V) = V - tau Delta V + c Psi'(V), so DV = M'(V)^-1
impl McfLinearization for ImplicitLinearization<'_> {
    fn value(&self) -> &[f64] {
        &self.value
    }

    fn jvp(&self, p: &[f64]) -> Vec<f64> {
        self.step.solve_hessian(&self.diag, p).0
    }

    fn vjp(&self, w: &[f64]) -> Vec<f64> {
        self.jvp(w)
    }

    fn curvature(&self, g: &[f64]) -> Box<dyn Fn(&[f64]) -> Vec<f64> + '_> {
        let mg = self.jvp(g);
        let weights: Vec<f64> = mg.iter().zip(&self.psi3).map(|(a, b)| a * b).collect();
        Box::new(move |p| {
            let mp = self.jvp(p);
            let f: Vec<f64> = mp.iter().zip(&weights).map(|(a, w)| -a * w).collect();
            self.jvp(&f)
        })
    }
}

/// One semi-implicit Allen-Cahn step.
pub fn mcf_semi_implicit_step(u: &NodalField, cfg: &AllenCahnStepConfig) -> Result<NodalField> {
    let step = SemiImplicitStep::new(u.spec(), *cfg)?;
    u.with_values(step.step(u.values())?)
}

/// One fully implicit Allen-Cahn step.
pub fn mcf_implicit_step(u: &NodalField, cfg: &AllenCahnStepConfig) -> Result<NodalField> {
    let step = ImplicitStep::new(u.spec(), *cfg)?;
    u.with_values(step.solve(u.values())?.value)
}

/// Exact periodic heat evolution over time `tau`.
pub fn heat_step_spectral(u: &NodalField, tau: f64) -> Result<NodalField> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau = {tau}")));
    }
    if tau == 0.0 {
        return Ok(u.clone());
    }
    let solver = SpectralSolver::new(u.spec());
    u.with_values(solver.heat(u.values(), tau))
}

/// `phi^-1(exp(tau_tilde Delta) U)`.
pub fn mbo_like_step(u: &NodalField, cfg: &AllenCahnStepConfig) -> Result<NodalField> {
    if !cfg.is_monotone() {
        return Err(Error::NotMonotone { ratio: cfg.ratio() });
    }
    let heated = heat_step_spectral(u, cfg.tau_tilde)?;
    let values = heated
        .values()
        .iter()
        .map(|&y| soft_threshold_inverse(y, cfg))
        .collect::<Result<Vec<_>>>()?;
    u.with_values(values)
}
