use std::time::Instant;

use log::info;
use rayon::prelude::*;
use willmore_core::grid::{GridSpec, NodalField, physical_l2_dist};
use willmore_core::neural::NeuralMcfOperator;
use willmore_core::phase_field::{phase_field_from_shape, sphere_phase_field};
use willmore_core::reference::{circle_radius_mcf, circle_radius_willmore};

use super::{Inner, load_operator, prepare_output};
use crate::config::{ExperimentConfig, Kind, Method};
use crate::error::{CliError, Result};
use crate::output::{csv_writer, fmt_f64};

/// Errors of one method against the exact circles, averaged over the radius family.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodErrors {
    pub method: Method,
    /// Mean error after each step, starting with the initial state.
    pub per_step: Vec<f64>,
    /// Error after the last step, per radius.
    pub per_radius: Vec<f64>,
    pub seconds: f64,
}

impl MethodErrors {
    pub fn final_error(&self) -> f64 {
        *self.per_step.last().expect("at least the initial state")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McfValidation {
    /// Mean distance between the initial and final exact circles.
    pub baseline: f64,
    pub methods: Vec<MethodErrors>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WillmoreValidation {
    pub baseline: f64,
    pub methods: Vec<MethodErrors>,
    /// Per method, distance to the reference run after each step.
    pub test_shape: Vec<(Method, Vec<f64>)>,
}

fn centered_circle(spec: &GridSpec, radius: f64, eps: f64) -> Result<NodalField> {
    Ok(sphere_phase_field(spec, radius, &spec.center(), eps)?)
}

/// Mean over `radii` of the distance between a circle and its exact evolution
/// after time `t`.
pub fn circle_displacement(
    spec: &GridSpec,
    radii: &[f64],
    eps: f64,
    evolve: impl Fn(f64) -> willmore_core::Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for &r in radii {
        let a = centered_circle(spec, r, eps)?;
        let b = centered_circle(spec, evolve(r)?, eps)?;
        total += physical_l2_dist(&a, &b)?;
    }
    Ok(total / radii.len() as f64)
}

/// Sums per-radius trajectories (in radius order) into per-step means.
fn average(method: Method, runs: Vec<Vec<f64>>, seconds: f64) -> MethodErrors {
    let steps = runs[0].len();
    let per_step = (0..steps)
        .map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / runs.len() as f64)
        .collect();
    let per_radius = runs.iter().map(|r| r[steps - 1]).collect();
    MethodErrors {
        method,
        per_step,
        per_radius,
        seconds,
    }
}

/// Evolves every circle of the family by `steps` mean curvature steps of each method.
pub fn run_mcf_circles(cfg: &ExperimentConfig, op: Option<&NeuralMcfOperator>) -> Result<McfValidation> {
    let spec = cfg.grid_spec()?;
    let radii = cfg.radii.radii();
    let t_end = cfg.steps as f64 * cfg.tau_tilde;
    let baseline = circle_displacement(&spec, &radii, cfg.eps, |r| circle_radius_mcf(r, t_end, spec.dim()))?;
    let mut methods = Vec::new();
    for &method in &cfg.methods {
        let inner = Inner::build(method, &spec, cfg, op)?;
        let start = Instant::now();
        let runs = radii
            .par_iter()
            .map(|&r| {
                let mut u = centered_circle(&spec, r, cfg.eps)?;
                let mut errors = Vec::with_capacity(cfg.steps + 1);
                for k in 0..=cfg.steps {
                    if k > 0 {
                        u = u.with_values(inner.step(u.values())?)?;
                    }
                    let exact = circle_radius_mcf(r, k as f64 * cfg.tau_tilde, spec.dim())?;
                    errors.push(physical_l2_dist(&u, &centered_circle(&spec, exact, cfg.eps)?)?);
                }
                Ok(errors)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = average(method, runs, start.elapsed().as_secs_f64());
        info!("{}: error {:.5} after {} steps ({:.1} s)", method.name(), m.final_error(), cfg.steps, m.seconds);
        methods.push(m);
    }
    Ok(McfValidation { baseline, methods })
}

/// Evolves every circle of the family by `steps` Willmore steps with each inner method.
pub fn run_willmore_circles(cfg: &ExperimentConfig, op: Option<&NeuralMcfOperator>) -> Result<WillmoreValidation> {
    let spec = cfg.grid_spec()?;
    let wcfg = cfg.willmore()?;
    let radii = cfg.radii.radii();
    let t_end = cfg.steps as f64 * cfg.tau;
    let baseline = circle_displacement(&spec, &radii, cfg.eps, |r| circle_radius_willmore(r, t_end, spec.dim()))?;
    let mut methods = Vec::new();
    for &method in &cfg.methods {
        let inner = Inner::build(method, &spec, cfg, op)?;
        let start = Instant::now();
        let runs = radii
            .par_iter()
            .map(|&r| {
                let mut u = centered_circle(&spec, r, cfg.eps)?;
                let mut errors = Vec::with_capacity(cfg.steps + 1);
                for k in 0..=cfg.steps {
                    if k > 0 {
                        u = inner.willmore_step(&u, &wcfg)?.0;
                    }
                    let exact = circle_radius_willmore(r, k as f64 * cfg.tau, spec.dim())?;
                    errors.push(physical_l2_dist(&u, &centered_circle(&spec, exact, cfg.eps)?)?);
                }
                Ok(errors)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = average(method, runs, start.elapsed().as_secs_f64());
        info!("{}: error {:.5} after {} steps ({:.1} s)", method.name(), m.final_error(), cfg.steps, m.seconds);
        methods.push(m);
    }
    let test_shape = match &cfg.test_shape {
        Some(_) => run_test_shape(cfg, op)?,
        None => Vec::new(),
    };
    Ok(WillmoreValidation {
        baseline,
        methods,
        test_shape,
    })
}

/// Distances between each method's run of the test shape and a run on the
/// finer reference grid, compared at the coarse nodes.
fn run_test_shape(cfg: &ExperimentConfig, op: Option<&NeuralMcfOperator>) -> Result<Vec<(Method, Vec<f64>)>> {
    let shape = cfg.test_shape.as_ref().expect("checked by the caller");
    let spec = cfg.grid_spec()?;
    let fine = cfg.grid.spec_with_n(cfg.reference.n)?;
    let ratio = cfg.reference.n / cfg.grid.n;
    let wcfg = cfg.willmore()?;
    let restrict = |u: &NodalField| -> Result<NodalField> {
        let values = (0..spec.len())
            .map(|i| {
                let idx = spec.multi_index(i);
                let fine_idx: Vec<usize> = idx[..spec.dim()].iter().map(|&j| j * ratio).collect();
                u.values()[fine.flat_index(&fine_idx)]
            })
            .collect();
        Ok(NodalField::new(spec.clone(), values)?)
    };
    let reference_inner = Inner::build(cfg.reference.inner, &fine, cfg, op)?;
    let mut u = phase_field_from_shape(&fine, shape, cfg.eps)?;
    let mut reference = vec![restrict(&u)?];
    for k in 1..=cfg.steps {
        u = reference_inner.willmore_step(&u, &wcfg)?.0;
        reference.push(restrict(&u)?);
        info!("reference step {k}/{}", cfg.steps);
    }
    cfg.methods
        .iter()
        .map(|&method| {
            let inner = Inner::build(method, &spec, cfg, op)?;
            let mut u = phase_field_from_shape(&spec, shape, cfg.eps)?;
            let mut errors = vec![physical_l2_dist(&u, &reference[0])?];
            for r in &reference[1..] {
                u = inner.willmore_step(&u, &wcfg)?.0;
                errors.push(physical_l2_dist(&u, r)?);
            }
            Ok((method, errors))
        })
        .collect()
}

fn needs_operator(cfg: &ExperimentConfig) -> Result<Option<NeuralMcfOperator>> {
    let uses = cfg.methods.contains(&Method::Neural) || (cfg.test_shape.is_some() && cfg.reference.inner == Method::Neural);
    uses.then(|| load_operator(cfg)).transpose()
}

fn write_errors(dir: &std::path::Path, file: &str, step_size: f64, baseline: f64, methods: &[MethodErrors], radii: &[f64]) -> Result<()> {
    let mut w = csv_writer(&dir.join(format!("{file}_errors.csv")))?;
    w.write_record(["method", "step", "time", "mean_error"])?;
    for m in methods {
        for (k, e) in m.per_step.iter().enumerate() {
            w.write_record([m.method.name().to_string(), k.to_string(), fmt_f64(k as f64 * step_size), fmt_f64(*e)])?;
        }
    }
    w.flush().map_err(|e| CliError::io(dir, e))?;
    let mut w = csv_writer(&dir.join(format!("{file}_radii.csv")))?;
    w.write_record(["method", "radius", "final_error"])?;
    for m in methods {
        for (r, e) in radii.iter().zip(&m.per_radius) {
            w.write_record([m.method.name(), &fmt_f64(*r), &fmt_f64(*e)])?;
        }
    }
    w.flush().map_err(|e| CliError::io(dir, e))?;
    let mut w = csv_writer(&dir.join(format!("{file}_summary.csv")))?;
    w.write_record(["method", "final_error", "seconds"])?;
    w.write_record(["baseline", &fmt_f64(baseline), ""])?;
    for m in methods {
        w.write_record([m.method.name(), &fmt_f64(m.final_error()), &fmt_f64(m.seconds)])?;
    }
    w.flush().map_err(|e| CliError::io(dir, e))?;
    Ok(())
}

pub fn cmd_validate_mcf(cfg: &ExperimentConfig) -> Result<McfValidation> {
    cfg.validate(Kind::ValidateMcf)?;
    let op = needs_operator(cfg)?;
    let dir = prepare_output(cfg)?;
    let v = run_mcf_circles(cfg, op.as_ref())?;
    write_errors(dir, "mcf", cfg.tau_tilde, v.baseline, &v.methods, &cfg.radii.radii())?;
    Ok(v)
}

pub fn cmd_validate_willmore(cfg: &ExperimentConfig) -> Result<WillmoreValidation> {
    cfg.validate(Kind::ValidateWillmore)?;
    let op = needs_operator(cfg)?;
    let dir = prepare_output(cfg)?;
    let v = run_willmore_circles(cfg, op.as_ref())?;
    write_errors(dir, "willmore", cfg.tau, v.baseline, &v.methods, &cfg.radii.radii())?;
    if !v.test_shape.is_empty() {
        let path = dir.join("test_shape_errors.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["method", "step", "error"])?;
        for (m, errors) in &v.test_shape {
            for (k, e) in errors.iter().enumerate() {
                w.write_record([m.name(), &k.to_string(), &fmt_f64(*e)])?;
            }
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(v)
}
