//! Checks that need an operator that actually approximates one mean curvature
//! step: the heat-kernel start at n = 128 followed by a short Adam run.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use willmore_core::Error;
use willmore_core::grid::{GridSpec, NodalField, discrete_l2_dist, discrete_l2_norm};
use willmore_core::neural::{
    DEFAULT_LAYER_SIZES, Initialization, MlpParams, NeuralMcfOperator, Trainer, TrainingConfig, apply_operator,
    heat_kernel_initialization, train_operator, training_loss,
};
use willmore_core::phase_field::{perimeter_energy, phase_field_from_shape, sphere_phase_field, Shape};
use willmore_core::reference::{circle_radius_mcf, circle_radius_willmore};
use willmore_core::willmore::{Mask, WillmoreConfig, newton_cg_step, run_flow, willmore_proxy};

const EPS: f64 = 1.0 / 64.0;
const TAU_TILDE: f64 = 1.0 / 16384.0;

fn grid() -> GridSpec {
    GridSpec::unit(2, 128).unwrap()
}

fn operator() -> &'static NeuralMcfOperator {
    static OP: OnceLock<NeuralMcfOperator> = OnceLock::new();
    OP.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let op = heat_kernel_initialization(&grid(), 17, &DEFAULT_LAYER_SIZES, TAU_TILDE, EPS, 20_000, &mut rng).unwrap();
        let cfg = TrainingConfig {
            learning_rate: 1e-4,
            final_learning_rate: Some(1e-5),
            iterations: 200,
            ..TrainingConfig::default()
        };
        let mut trainer = Trainer::new(cfg, grid(), op, 0).unwrap();
        trainer.run(200, |_| {}).unwrap();
        trainer.into_operator()
    })
}

fn circle(r: f64) -> NodalField {
    sphere_phase_field(&grid(), r, &[0.5, 0.5], EPS).unwrap()
}

#[test]
fn heat_kernel_start_is_a_normalized_symmetric_stencil() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = GridSpec::unit(2, 32).unwrap();
    let op = heat_kernel_initialization(&spec, 5, &DEFAULT_LAYER_SIZES, 1e-3, 0.0625, 200, &mut rng).unwrap();
    let k = op.kernel();
    assert!((k.sum() - 1.0).abs() < 1e-14);
    let w = k.weights();
    let reversed: Vec<f64> = w.iter().rev().copied().collect();
    for (a, b) in w.iter().zip(&reversed) {
        assert!((a - b).abs() < 1e-15);
    }
    let center = w[w.len() / 2];
    assert!(w.iter().all(|&x| x <= center && x > 0.0));
}

#[test]
fn heat_kernel_start_needs_a_monotone_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = GridSpec::unit(2, 32).unwrap();
    // tau_tilde / eps^2 = 1 >= 8/9
    let e = heat_kernel_initialization(&spec, 5, &DEFAULT_LAYER_SIZES, 1.0 / 256.0, 0.0625, 10, &mut rng);
    assert!(matches!(e, Err(Error::NotMonotone { .. })));
}

#[test]
fn training_can_start_from_the_heat_kernel() {
    let cfg = TrainingConfig {
        m: 8,
        r_min: 0.1,
        r_max: 0.35,
        batch_size: 4,
        iterations: 5,
        log_every: 5,
        ladder: vec![32],
        kernel_widths: Some(vec![5]),
        held_out: vec![0.2],
        init: Initialization::HeatKernel,
        init_fit_iterations: 300,
        ..TrainingConfig::default()
    };
    let spec = GridSpec::unit(2, 32).unwrap();
    let op = train_operator(&cfg, &spec, 0.0625, 1e-3).unwrap();
    assert!((op.kernel().sum() - 1.0).abs() < 0.1);
    let again = train_operator(&cfg, &spec, 0.0625, 1e-3).unwrap();
    assert_eq!(op, again);
}

#[test]
fn zero_network_loss_is_the_mean_squared_target_norm() {
    let spec = GridSpec::unit(2, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let op = heat_kernel_initialization(&spec, 5, &DEFAULT_LAYER_SIZES, 1e-3, 0.0625, 10, &mut rng).unwrap();
    let (kernel, _) = op.into_parts();
    let zero = MlpParams::zeros(&DEFAULT_LAYER_SIZES).unwrap();
    let op = NeuralMcfOperator::new(kernel, zero, 1e-3, 0.0625, spec.clone()).unwrap();
    let radii: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..0.4)).collect();
    let loss = training_loss(&op, &radii, &spec, 0.0625).unwrap();
    let expected = radii
        .iter()
        .map(|&r| {
            let target = sphere_phase_field(&spec, (r * r - 2e-3).sqrt(), &[0.5, 0.5], 0.0625).unwrap();
            target.values().iter().map(|v| v * v).sum::<f64>() / spec.len() as f64
        })
        .sum::<f64>()
        / radii.len() as f64;
    assert!((loss - expected).abs() <= 1e-13 * expected, "{loss} vs {expected}");
}

#[test]
fn one_step_follows_the_shrinking_circle() {
    let op = operator();
    for r in [0.1, 0.2, 0.3] {
        let v = apply_operator(op, &circle(r)).unwrap();
        let target = circle(circle_radius_mcf(r, TAU_TILDE, 2).unwrap());
        let e = discrete_l2_dist(&v, &target).unwrap();
        assert!(e <= 0.01, "r = {r}: error {e}");
    }
}

#[test]
fn proxy_approximates_the_circle_willmore_energy() {
    let cfg = WillmoreConfig::new(2f64.powi(-18), TAU_TILDE, EPS).unwrap();
    let w = willmore_proxy(&circle(0.3), operator(), &cfg).unwrap();
    let exact = PI / 0.3;
    assert!((w - exact).abs() <= 0.3 * exact, "{w} vs {exact}");
}

#[test]
fn one_willmore_step_follows_the_expanding_circle() {
    let tau = 2f64.powi(-18);
    let cfg = WillmoreConfig::new(tau, TAU_TILDE, EPS).unwrap();
    let (u, diag) = newton_cg_step(&circle(0.3), operator(), &cfg).unwrap();
    assert!(diag.final_energy <= diag.initial_energy);
    let target = circle(circle_radius_willmore(0.3, tau, 2).unwrap());
    let e = discrete_l2_dist(&u, &target).unwrap();
    assert!(e <= 0.02, "error {e}");
}

/// `P^2 / (4 pi A)` with the area from the phase indicator and the perimeter
/// from the interfacial energy.
fn isoperimetric_ratio(u: &NodalField) -> f64 {
    let cell = u.spec().cell_volume();
    let area: f64 = u.values().iter().map(|v| 0.5 * (1.0 + v) * cell).sum();
    let perimeter = perimeter_energy(u, EPS);
    perimeter * perimeter / (4.0 * PI * area)
}

#[test]
fn rectangle_rounds_off() {
    let spec = grid();
    let u0 = phase_field_from_shape(&spec, &Shape::rectangle(&[0.5, 0.5], &[0.2, 0.1]), EPS).unwrap();
    let cfg = WillmoreConfig::new(2f64.powi(-16), TAU_TILDE, EPS).unwrap();
    let mut ratios = Vec::new();
    let traj = run_flow(&u0, 4, operator(), &cfg, |_, u| {
        ratios.push(isoperimetric_ratio(u));
        Ok(())
    })
    .unwrap();
    assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    let w: Vec<f64> = traj.records.iter().map(|r| r.willmore_proxy).collect();
    assert!(w.windows(2).all(|p| p[1] <= p[0] + 1e-10), "{w:?}");
}

#[test]
fn random_mask_is_respected_over_ten_steps() {
    let spec = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let free: Vec<bool> = (0..spec.len()).map(|_| rng.gen_bool(0.5)).collect();
    let mut cfg = WillmoreConfig::new(2f64.powi(-18), TAU_TILDE, EPS).unwrap();
    cfg.mask = Some(Mask::new(spec.clone(), free.clone()).unwrap());
    let u0 = circle(0.3);
    let mut last = u0.clone();
    run_flow(&u0, 10, operator(), &cfg, |_, u| {
        last = u.clone();
        Ok(())
    })
    .unwrap();
    for ((a, b), f) in last.values().iter().zip(u0.values()).zip(&free) {
        if !f {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    assert!(discrete_l2_norm(&last) > 0.0);
}
