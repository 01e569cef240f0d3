mod export;
mod flow;
mod train;
mod validate;

pub use export::cmd_export;
pub use flow::{FlowOutcome, cmd_flow, cmd_inpaint};
pub use train::cmd_train;
pub use validate::{
    McfValidation, MethodErrors, WillmoreValidation, circle_displacement, cmd_validate_mcf, cmd_validate_willmore,
    run_mcf_circles, run_willmore_circles,
};

use std::path::Path;

use log::info;
use willmore_core::grid::{GridSpec, NodalField};
use willmore_core::neural::{BoundOperator, NeuralMcfOperator, load_checkpoint_for};
use willmore_core::phase_field::phase_field_from_shape;
use willmore_core::reference::{ImplicitStep, SemiImplicitStep, mbo_like_step};
use willmore_core::step::McfStep;
use willmore_core::willmore::{FlowRecord, FlowTrajectory, StepDiagnostics, WillmoreConfig, newton_cg_step_with, run_flow_with};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, Result};
use crate::output::create_dir;

/// Loads the configured checkpoint and checks it against the configured regime.
pub fn load_operator(cfg: &ExperimentConfig) -> Result<NeuralMcfOperator> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("no checkpoint configured".into()))?;
    let op = load_checkpoint_for(path, cfg.grid.dim)?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
    if !close(op.tau_tilde(), cfg.tau_tilde) || !close(op.epsilon(), cfg.eps) {
        return Err(CliError::Config(format!(
            "checkpoint was trained for eps = {}, tau_tilde = {} but the run uses eps = {}, tau_tilde = {}",
            op.epsilon(),
            op.tau_tilde(),
            cfg.eps,
            cfg.tau_tilde
        )));
    }
    info!("loaded operator from {} (n_K = {})", path.display(), op.kernel().width());
    Ok(op)
}

/// The configured shape's phase field, or the configured input field.
pub fn initial_field(cfg: &ExperimentConfig) -> Result<NodalField> {
    let spec = cfg.grid_spec()?;
    match (&cfg.shape, &cfg.input_field) {
        (Some(shape), _) => Ok(phase_field_from_shape(&spec, shape, cfg.eps)?),
        (None, Some(path)) => {
            let field = willmore_core::grid::io::read_field(path)?;
            if field.spec() != &spec {
                return Err(CliError::Config(format!(
                    "{} does not live on the configured grid",
                    path.display()
                )));
            }
            Ok(field)
        }
        (None, None) => Err(CliError::Config("no initial shape or field".into())),
    }
}

/// Creates the output directory and records the resolved configuration in it.
pub fn prepare_output(cfg: &ExperimentConfig) -> Result<&Path> {
    let dir = cfg.output_dir.as_path();
    create_dir(dir)?;
    let path = dir.join("resolved_config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io(&path, e))?;
    Ok(dir)
}

/// An inner step built for one grid.
pub enum Inner<'a> {
    Neural(BoundOperator<'a>),
    SemiImplicit(SemiImplicitStep),
    Implicit(ImplicitStep),
    Mbo(willmore_core::reference::AllenCahnStepConfig, GridSpec),
}

impl<'a> Inner<'a> {
    pub fn build(method: Method, spec: &GridSpec, cfg: &ExperimentConfig, op: Option<&'a NeuralMcfOperator>) -> Result<Self> {
        let ac = cfg.allen_cahn()?;
        Ok(match method {
            Method::Neural => {
                let op = op.ok_or_else(|| CliError::Config("the neural method needs a checkpoint".into()))?;
                Inner::Neural(op.bind(spec)?)
            }
            Method::SemiImplicit => Inner::SemiImplicit(SemiImplicitStep::new(spec, ac)?),
            Method::Implicit => Inner::Implicit(ImplicitStep::new(spec, ac)?),
            Method::Mbo => Inner::Mbo(ac, spec.clone()),
        })
    }

    /// One mean curvature step.
    pub fn step(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Inner::Neural(s) => s.step(u)?,
            Inner::SemiImplicit(s) => s.step(u)?,
            Inner::Implicit(s) => s.step(u)?,
            Inner::Mbo(ac, spec) => mbo_like_step(&NodalField::new(spec.clone(), u.to_vec())?, ac)?.into_values(),
        })
    }

    /// One Willmore step with this inner step.
    pub fn willmore_step(&self, u: &NodalField, cfg: &WillmoreConfig) -> Result<(NodalField, StepDiagnostics)> {
        Ok(match self {
            Inner::Neural(s) => newton_cg_step_with(u, s, cfg)?,
            Inner::SemiImplicit(s) => newton_cg_step_with(u, s, cfg)?,
            Inner::Implicit(s) => newton_cg_step_with(u, s, cfg)?,
            Inner::Mbo(..) => return Err(mbo_not_differentiable()),
        })
    }

    pub fn run_flow(
        &self,
        u0: &NodalField,
        steps: usize,
        cfg: &WillmoreConfig,
        sink: impl FnMut(&FlowRecord, &NodalField) -> willmore_core::Result<()>,
    ) -> Result<FlowTrajectory> {
        Ok(match self {
            Inner::Neural(s) => run_flow_with(u0, steps, s, cfg, sink)?,
            Inner::SemiImplicit(s) => run_flow_with(u0, steps, s, cfg, sink)?,
            Inner::Implicit(s) => run_flow_with(u0, steps, s, cfg, sink)?,
            Inner::Mbo(..) => return Err(mbo_not_differentiable()),
        })
    }
}

fn mbo_not_differentiable() -> CliError {
    CliError::Config("the mbo step has no derivatives and cannot drive a Willmore flow".into())
}
