use willmore_core::Error;
use willmore_core::grid::{GridSpec, NodalField};
use willmore_core::phase_field::sphere_phase_field;
use willmore_core::reference::{AllenCahnStepConfig, SemiImplicitStep};
use willmore_core::willmore::{
    HessianMode, Mask, WillmoreConfig, WillmoreProblem, apply_mask_constraint, field_checksum, newton_cg_step_with,
    run_flow_with,
};

const EPS: f64 = 0.0625;
const TAU_TILDE: f64 = 1.0 / 1024.0;

fn setup() -> (GridSpec, SemiImplicitStep, NodalField) {
    let spec = GridSpec::centered(2, 32, 1.0).unwrap();
    let step = SemiImplicitStep::new(&spec, AllenCahnStepConfig::new(EPS, TAU_TILDE).unwrap()).unwrap();
    let u0 = sphere_phase_field(&spec, 0.4, &[0.1, -0.05], EPS).unwrap();
    (spec, step, u0)
}

fn config() -> WillmoreConfig {
    WillmoreConfig::new(1e-4, TAU_TILDE, EPS).unwrap()
}

#[test]
fn newton_cg_converges_with_armijo_decrease() {
    let (_, step, u0) = setup();
    for mode in [HessianMode::Full, HessianMode::GaussNewton] {
        let mut cfg = config();
        cfg.hessian_mode = mode;
        let (u1, diag) = newton_cg_step_with(&u0, &step, &cfg).unwrap();
        assert!(diag.converged, "{mode:?}: gradient norm {:e}", diag.gradient_norm);
        assert!(!diag.line_search_failed);
        assert!(diag.final_energy < diag.initial_energy);
        assert!(diag.armijo_records.iter().all(|r| r.satisfies(cfg.armijo_slope)));
        let energies: Vec<f64> = diag.armijo_records.iter().map(|r| r.energy_after).collect();
        assert!(energies.windows(2).all(|w| w[1] <= w[0]));
        let problem = WillmoreProblem::new(&step, &cfg, u0.values()).unwrap();
        assert_eq!(problem.energy(u1.values()).unwrap(), diag.final_energy);
    }
}

#[test]
fn full_newton_needs_no_more_iterations_than_gauss_newton() {
    let (_, step, u0) = setup();
    let mut cfg = config();
    let (_, full) = newton_cg_step_with(&u0, &step, &cfg).unwrap();
    cfg.hessian_mode = HessianMode::GaussNewton;
    let (_, gn) = newton_cg_step_with(&u0, &step, &cfg).unwrap();
    assert!(full.newton_iterations <= gn.newton_iterations);
}

#[test]
fn masked_step_keeps_fixed_nodes_bit_exact() {
    let (spec, step, u0) = setup();
    let mut cfg = config();
    let free: Vec<bool> = (0..spec.len()).map(|i| spec.coordinates(i)[0] > 0.0).collect();
    cfg.mask = Some(Mask::new(spec.clone(), free.clone()).unwrap());
    let (u1, diag) = newton_cg_step_with(&u0, &step, &cfg).unwrap();
    assert!(diag.converged);
    let mut moved = false;
    for ((a, b), f) in u1.values().iter().zip(u0.values()).zip(&free) {
        if *f {
            moved |= a != b;
        } else {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    assert!(moved);
    let reapplied = apply_mask_constraint(&u1, &u0, cfg.mask.as_ref().unwrap()).unwrap();
    assert_eq!(reapplied, u1);
}

#[test]
fn fully_fixed_mask_returns_the_input() {
    let (spec, step, u0) = setup();
    let mut cfg = config();
    cfg.mask = Some(Mask::all(spec, false));
    let (u1, diag) = newton_cg_step_with(&u0, &step, &cfg).unwrap();
    assert_eq!(u1, u0);
    assert!(diag.converged);
    assert_eq!(diag.newton_iterations, 0);
}

#[test]
fn flow_is_deterministic_and_reports_every_state() {
    let (_, step, u0) = setup();
    let cfg = config();
    let mut seen = Vec::new();
    let a = run_flow_with(&u0, 3, &step, &cfg, |r, u| {
        assert_eq!(r.checksum, field_checksum(u.values()));
        seen.push(r.step);
        Ok(())
    })
    .unwrap();
    let b = run_flow_with(&u0, 3, &step, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    assert_eq!(a.step_diagnostics.len(), 3);
    let sums = |t: &willmore_core::willmore::FlowTrajectory| t.records.iter().map(|r| r.checksum).collect::<Vec<_>>();
    assert_eq!(sums(&a), sums(&b));
}

#[test]
fn sink_errors_stop_the_flow() {
    let (_, step, u0) = setup();
    let err = run_flow_with(&u0, 5, &step, &config(), |r, _| {
        if r.step == 2 { Err(Error::InvalidParameter("stop".into())) } else { Ok(()) }
    })
    .unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_)));
}

#[test]
fn config_validation_rejects_nonsense() {
    assert!(WillmoreConfig::new(-1.0, TAU_TILDE, EPS).is_err());
    assert!(WillmoreConfig::new(1e-4, 0.0, EPS).is_err());
    let mut cfg = config();
    cfg.backtrack_factor = 1.5;
    assert!(cfg.validate().is_err());
    let (_, step, u0) = setup();
    let mut cfg = config();
    cfg.mask = Some(Mask::all(GridSpec::unit(2, 8).unwrap(), true));
    assert!(newton_cg_step_with(&u0, &step, &cfg).is_err());
}

#[test]
fn mask_from_field_thresholds_at_one_half() {
    let spec = GridSpec::unit(1, 4).unwrap();
    let f = NodalField::new(spec, vec![0.0, 0.5, 0.51, 1.0]).unwrap();
    assert_eq!(Mask::from_field(&f).free(), &[false, false, true, true]);
    assert_eq!(Mask::from_field(&f).count_free(), 2);
}
