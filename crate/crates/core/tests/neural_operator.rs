use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use willmore_core::Error;
use willmore_core::grid::{GridSpec, NodalField, StencilKernel};
use willmore_core::neural::{
    DEFAULT_LAYER_SIZES, MlpParams, NeuralMcfOperator, Trainer, TrainingConfig, apply_operator, decode_checkpoint,
    encode_checkpoint, fit_mlp, load_checkpoint, load_checkpoint_for, operator_jvp, operator_vjp, save_checkpoint,
    train_progressive, training_loss,
};

const EPS: f64 = 0.0625;
const TAU: f64 = 1.0 / 16384.0;

fn random_operator(rng: &mut ChaCha8Rng, spec: &GridSpec, width: usize) -> NeuralMcfOperator {
    let weights = (0..width.pow(spec.dim() as u32)).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let kernel = StencilKernel::new(spec.dim(), width, weights).unwrap();
    let mlp = MlpParams::random_normal(&DEFAULT_LAYER_SIZES, rng).unwrap();
    NeuralMcfOperator::new(kernel, mlp, TAU, EPS, spec.clone()).unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, spec: &GridSpec) -> NodalField {
    NodalField::new(spec.clone(), (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &NodalField, b: &NodalField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

#[test]
fn jvp_matches_finite_differences_and_vjp_is_its_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for spec in [GridSpec::unit(2, 16).unwrap(), GridSpec::unit(3, 8).unwrap()] {
        let op = random_operator(&mut rng, &spec, 3);
        let u = random_field(&mut rng, &spec);
        let p = random_field(&mut rng, &spec);
        let w = random_field(&mut rng, &spec);
        let d = 1e-6;
        let shifted = |s: f64| u.with_values(u.values().iter().zip(p.values()).map(|(a, b)| a + s * b).collect()).unwrap();
        let vp = apply_operator(&op, &shifted(d)).unwrap();
        let vm = apply_operator(&op, &shifted(-d)).unwrap();
        let jvp = operator_jvp(&op, &u, &p).unwrap();
        for ((a, b), j) in vp.values().iter().zip(vm.values()).zip(jvp.values()) {
            assert_abs_diff_eq!((a - b) / (2.0 * d), *j, epsilon = 1e-7);
        }
        let vjp = operator_vjp(&op, &u, &w).unwrap();
        let (lhs, rhs) = (dot(&jvp, &w), dot(&p, &vjp));
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-11 * lhs.abs().max(1.0));
    }
}

#[test]
fn constant_input_gives_network_of_kernel_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let spec = GridSpec::unit(2, 16).unwrap();
    let op = random_operator(&mut rng, &spec, 5);
    let u = NodalField::constant(spec.clone(), 0.7);
    let v = apply_operator(&op, &u).unwrap();
    let expected = op.mlp().forward(0.7 * op.kernel().sum());
    assert!(v.values().iter().all(|&x| (x - expected).abs() < 1e-12));
}

#[test]
fn zero_kernel_maps_everything_to_network_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let spec = GridSpec::unit(2, 16).unwrap();
    let op = NeuralMcfOperator::initial(spec.clone(), 3, &DEFAULT_LAYER_SIZES, TAU, EPS, &mut rng).unwrap();
    let v = apply_operator(&op, &random_field(&mut rng, &spec)).unwrap();
    let f0 = op.mlp().forward(0.0);
    assert!(v.values().iter().all(|&x| (x - f0).abs() < 1e-14));
}

#[test]
fn operator_commutes_with_periodic_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let n = 16;
    let spec = GridSpec::unit(2, n).unwrap();
    let op = random_operator(&mut rng, &spec, 5);
    let u = random_field(&mut rng, &spec);
    let shift = |v: &[f64]| -> Vec<f64> { (0..n * n).map(|i| v[(i / n + 2) % n * n + (i % n + 7) % n]).collect() };
    let a = shift(apply_operator(&op, &u).unwrap().values());
    let b = apply_operator(&op, &u.with_values(shift(u.values())).unwrap()).unwrap();
    for (x, y) in a.iter().zip(b.values()) {
        assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
    }
}

#[test]
fn operator_rejects_bad_construction() {
    let spec = GridSpec::unit(2, 8).unwrap();
    let mlp = MlpParams::zeros(&DEFAULT_LAYER_SIZES).unwrap();
    let k3 = StencilKernel::zeros(3, 3).unwrap();
    assert!(matches!(
        NeuralMcfOperator::new(k3, mlp.clone(), TAU, EPS, spec.clone()),
        Err(Error::DimensionMismatch { .. })
    ));
    let wide = StencilKernel::zeros(2, 9).unwrap();
    assert!(matches!(
        NeuralMcfOperator::new(wide, mlp.clone(), TAU, EPS, spec.clone()),
        Err(Error::KernelTooWide { .. })
    ));
    let k = StencilKernel::zeros(2, 3).unwrap();
    assert!(NeuralMcfOperator::new(k, mlp, 0.0, EPS, spec).is_err());
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        m: 8,
        r_min: 0.1,
        r_max: 0.35,
        batch_size: 4,
        iterations: 6,
        log_every: 3,
        ladder: vec![16],
        kernel_widths: Some(vec![3]),
        held_out: vec![0.15, 0.25],
        ..TrainingConfig::default()
    }
}

#[test]
fn batch_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let grid = GridSpec::unit(2, 16).unwrap();
    let op = random_operator(&mut rng, &grid, 3);
    let trainer = Trainer::new(small_config(), grid.clone(), op.clone(), 3).unwrap();
    let batch = [0, 3, 5];
    let radii: Vec<f64> = batch.iter().map(|&i| trainer.radii()[i]).collect();
    let (loss, grad) = trainer.batch_gradient(&batch);
    assert_abs_diff_eq!(loss, training_loss(&op, &radii, &grid, EPS).unwrap(), epsilon = 1e-14);
    let n_k = op.kernel().weights().len();
    let perturb = |j: usize, d: f64| {
        let mut o = op.clone();
        if j < n_k {
            o.kernel_mut().weights_mut()[j] += d;
        } else {
            o.mlp_mut().theta_mut()[j - n_k] += d;
        }
        training_loss(&o, &radii, &grid, EPS).unwrap()
    };
    let d = 1e-6;
    for j in (0..grad.len()).step_by(7).chain(0..n_k) {
        let fd = (perturb(j, d) - perturb(j, -d)) / (2.0 * d);
        assert_abs_diff_eq!(grad[j], fd, epsilon = 1e-7 * grad[j].abs().max(1e-2));
    }
}

#[test]
fn training_loss_ignores_radius_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let grid = GridSpec::unit(2, 16).unwrap();
    let op = random_operator(&mut rng, &grid, 3);
    let a = training_loss(&op, &[0.1, 0.2, 0.3], &grid, EPS).unwrap();
    let b = training_loss(&op, &[0.3, 0.1, 0.2], &grid, EPS).unwrap();
    assert_abs_diff_eq!(a, b, epsilon = 1e-15);
    assert!(training_loss(&op, &[], &grid, EPS).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let grid = GridSpec::unit(2, 16).unwrap();
    let op = random_operator(&mut rng, &grid, 3);
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        ..small_config()
    };
    let mut trainer = Trainer::new(cfg, grid, op.clone(), 1).unwrap();
    let mut seen = 0;
    trainer.run(6, |_| seen += 1).unwrap();
    assert_eq!(seen, 2);
    assert_eq!(trainer.history().len(), 2);
    assert_eq!(trainer.operator().kernel(), op.kernel());
    assert_eq!(trainer.operator().mlp(), op.mlp());
}

#[test]
fn training_reduces_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let grid = GridSpec::unit(2, 16).unwrap();
    let op = NeuralMcfOperator::initial(grid.clone(), 3, &DEFAULT_LAYER_SIZES, TAU, EPS, &mut rng).unwrap();
    let cfg = TrainingConfig {
        learning_rate: 1e-2,
        iterations: 200,
        log_every: 50,
        ..small_config()
    };
    let mut trainer = Trainer::new(cfg, grid, op, 2).unwrap();
    let before = trainer.held_out_loss().unwrap();
    trainer.run(200, |_| {}).unwrap();
    let after = trainer.held_out_loss().unwrap();
    assert!(after < 0.2 * before, "{before:e} -> {after:e}");
}

#[test]
fn trainer_refuses_radii_that_vanish_within_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let grid = GridSpec::unit(2, 16).unwrap();
    let op = NeuralMcfOperator::initial(grid.clone(), 3, &DEFAULT_LAYER_SIZES, 0.01, EPS, &mut rng).unwrap();
    assert!(matches!(
        Trainer::new(small_config(), grid, op, 0),
        Err(Error::Extinction { .. })
    ));
}

#[test]
fn loss_target_is_enforced() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let grid = GridSpec::unit(2, 16).unwrap();
    let op = NeuralMcfOperator::initial(grid.clone(), 3, &DEFAULT_LAYER_SIZES, TAU, EPS, &mut rng).unwrap();
    let cfg = TrainingConfig {
        loss_target: Some(1e-30),
        ..small_config()
    };
    let trainer = Trainer::new(cfg, grid, op, 0).unwrap();
    assert!(matches!(trainer.check_target(), Err(Error::TrainingNotConverged { .. })));
}

#[test]
fn progressive_training_grows_the_kernel() {
    let cfg = TrainingConfig {
        ladder: vec![16, 32],
        kernel_widths: Some(vec![3, 5]),
        ..small_config()
    };
    let mut rungs = Vec::new();
    let ops = train_progressive(&cfg, 2, EPS, TAU, |rung, t| {
        rungs.push((rung, t.operator().trained_grid().n()));
        Ok(())
    })
    .unwrap();
    assert_eq!(rungs, vec![(0, 16), (1, 32)]);
    assert_eq!(ops[0].kernel().width(), 3);
    assert_eq!(ops[1].kernel().width(), 5);
    assert_eq!(ops[1].trained_grid().n(), 32);
}

#[test]
fn training_config_rejects_inconsistent_settings() {
    let base = small_config();
    for cfg in [
        TrainingConfig { r_max: 0.6, ..base.clone() },
        TrainingConfig { batch_size: 9, ..base.clone() },
        TrainingConfig { ladder: vec![32, 16], kernel_widths: None, ..base.clone() },
        TrainingConfig { kernel_widths: Some(vec![3, 5]), ..base.clone() },
    ] {
        assert!(cfg.validate(0.5).is_err());
    }
}

#[test]
fn network_fit_reproduces_a_smooth_profile() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mlp = MlpParams::random_normal(&DEFAULT_LAYER_SIZES, &mut rng).unwrap();
    let loss = fit_mlp(&mut mlp, |x| (1.5 * x).tanh(), (-2.0, 2.0), 64, 3000, 1e-2);
    assert!(loss < 1e-3, "loss {loss:e}");
}

#[test]
fn checkpoint_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let spec = GridSpec::centered(2, 16, 1.0).unwrap();
    let op = random_operator(&mut rng, &spec, 5);
    let back = decode_checkpoint(&encode_checkpoint(&op)).unwrap();
    assert_eq!(back, op);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.wnet");
    save_checkpoint(&op, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), op);
    assert!(matches!(
        load_checkpoint_for(&path, 3),
        Err(Error::DimensionMismatch { expected: 3, found: 2 })
    ));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let spec = GridSpec::unit(2, 16).unwrap();
    let bytes = encode_checkpoint(&random_operator(&mut rng, &spec, 3));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(decode_checkpoint(&bad_magic).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_checkpoint(&long).is_err());
    let mut version = bytes;
    version[4] = 99;
    assert!(matches!(decode_checkpoint(&version), Err(Error::UnsupportedVersion(_))));
}
