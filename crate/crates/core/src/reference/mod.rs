//! Classical Allen-Cahn steps and closed-form sphere evolutions.

pub mod allen_cahn;
pub mod analytic;

pub use allen_cahn::{
    AllenCahnStepConfig, ImplicitOutcome, ImplicitStep, SemiImplicitStep, SpectralSolver, heat_step_spectral,
    mbo_like_step, mcf_implicit_step, mcf_semi_implicit_step, soft_threshold, soft_threshold_inverse,
};
pub use analytic::{circle_radius_mcf, circle_radius_willmore};
