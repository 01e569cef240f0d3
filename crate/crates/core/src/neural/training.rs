//! Fitting `V[U_r] ~ U_R(r)` on sphere phase fields with Adam.

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{MlpParams, NeuralMcfOperator, DEFAULT_LAYER_SIZES};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, NodalField, PeriodicFft, StencilKernel, upsample_kernel_bilinear};
use crate::phase_field::sphere_phase_field;
use crate::reference::{AllenCahnStepConfig, SpectralSolver, circle_radius_mcf, soft_threshold_inverse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Number of training radii.
    pub m: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// When set, the step size decays geometrically to this value over the run.
    pub final_learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Grid sizes of the progressive curriculum, coarse to fine.
    pub ladder: Vec<usize>,
    /// Stencil width per rung; `n/8 + 1` when absent.
    pub kernel_widths: Option<Vec<usize>>,
    /// Radii for the held-out loss.
    pub held_out: Vec<f64>,
    /// Held-out loss that counts as converged.
    pub loss_target: Option<f64>,
    pub layer_sizes: Vec<usize>,
    /// Iterations between progress records.
    pub log_every: usize,
    pub init: Initialization,
    /// Adam iterations for fitting the network in [`Initialization::HeatKernel`].
    pub init_fit_iterations: usize,
}

/// Starting point of the first rung.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    /// Zero kernel and normally distributed network parameters.
    #[default]
    Zero,
    /// Truncated heat kernel `exp(tau_tilde Delta)` and a network fitted to the
    /// inverse soft threshold, i.e. a smoothed thresholding step.
    HeatKernel,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            m: 100,
            r_min: 0.05,
            r_max: 0.4,
            batch_size: 10,
            learning_rate: 1e-3,
            final_learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            iterations: 20_000,
            seed: 0,
            ladder: vec![128],
            kernel_widths: None,
            held_out: vec![0.075, 0.125, 0.175, 0.225, 0.275, 0.325, 0.375],
            loss_target: None,
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
            log_every: 100,
            init: Initialization::Zero,
            init_fit_iterations: 20_000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, half_domain: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(0.0 < self.r_min && self.r_min < self.r_max && self.r_max < half_domain) {
            return bad(format!(
                "need 0 < r_min < r_max < {half_domain}, got {} and {}",
                self.r_min, self.r_max
            ));
        }
        if self.m == 0 || self.batch_size == 0 || self.batch_size > self.m {
            return bad(format!("need 0 < batch_size <= m, got {} and {}", self.batch_size, self.m));
        }
        if !(self.learning_rate >= 0.0) || self.final_learning_rate.is_some_and(|lr| !(lr >= 0.0)) {
            return bad("learning rates must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_epsilon > 0.0) {
            return bad("Adam coefficients out of range".into());
        }
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("ladder {:?} must be non-empty and increasing", self.ladder));
        }
        if let Some(w) = &self.kernel_widths {
            if w.len() != self.ladder.len() {
                return bad("one kernel width per ladder rung is required".into());
            }
        }
        if self.held_out.iter().any(|&r| !(r > 0.0 && r < half_domain)) {
            return bad("held-out radii must lie inside the domain".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        Ok(())
    }

    /// Kernel width for rung `rung`.
    pub fn kernel_width(&self, rung: usize) -> usize {
        match &self.kernel_widths {
            Some(w) => w[rung],
            None => self.ladder[rung] / 8 + 1,
        }
    }

    fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.final_learning_rate {
            Some(end) if self.iterations > 1 && self.learning_rate > 0.0 && end > 0.0 => {
                let t = iteration as f64 / (self.iterations - 1) as f64;
                self.learning_rate * (end / self.learning_rate).powf(t)
            }
            _ => self.learning_rate,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert!(params.len() == self.m.len() && grad.len() == self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// `(1/m) sum_i |V[U_(r_i)] - U_(R(r_i))|^2` in the discrete norm, spheres
/// centered in `grid`.
pub fn training_loss(op: &NeuralMcfOperator, radii: &[f64], grid: &GridSpec, eps: f64) -> Result<f64> {
    if radii.is_empty() {
        return Err(Error::InvalidParameter("no radii".into()));
    }
    let bound = op.bind(grid)?;
    let center = grid.center();
    let mut total = 0.0;
    for &r in radii {
        let target_r = circle_radius_mcf(r, op.tau_tilde(), grid.dim())?;
        let u = sphere_phase_field(grid, r, &center, eps)?;
        let t = target_field(grid, target_r, &center, eps)?;
        let v = bound.apply(u.values());
        total += crate::grid::mean_square_diff(&v, t.values());
    }
    Ok(total / radii.len() as f64)
}

// the limit of a vanished sphere is the constant -1 phase
fn target_field(grid: &GridSpec, r: f64, center: &[f64], eps: f64) -> Result<NodalField> {
    if r > 0.0 {
        sphere_phase_field(grid, r, center, eps)
    } else {
        Ok(NodalField::constant(grid.clone(), -1.0))
    }
}

/// One progress record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainingRecord {
    pub iteration: usize,
    /// Mean mini-batch loss since the previous record.
    pub batch_loss: f64,
    pub held_out_loss: f64,
}

/// Stateful Adam training of one operator on one grid.
pub struct Trainer {
    cfg: TrainingConfig,
    grid: GridSpec,
    eps: f64,
    op: NeuralMcfOperator,
    adam: Adam,
    rng: ChaCha8Rng,
    fft: PeriodicFft,
    radii: Vec<f64>,
    // spectra of the training inputs and nodal targets
    inputs_hat: Vec<Vec<Complex64>>,
    targets: Vec<Vec<f64>>,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
    history: Vec<TrainingRecord>,
}

impl Trainer {
    /// Starts from `op`, whose kernel must match the grid dimension.
    pub fn new(cfg: TrainingConfig, grid: GridSpec, op: NeuralMcfOperator, seed: u64) -> Result<Self> {
        cfg.validate(0.5 * grid.edge_length())?;
        if op.kernel().width() > grid.n() {
            return Err(Error::KernelTooWide {
                width: op.kernel().width(),
                n: grid.n(),
            });
        }
        let eps = op.epsilon();
        let tau = op.tau_tilde();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let radii: Vec<f64> = (0..cfg.m).map(|_| rng.gen_range(cfg.r_min..cfg.r_max)).collect();
        for &r in radii.iter().chain(&cfg.held_out) {
            let extinction = r * r / (2.0 * (grid.dim() - 1) as f64);
            if tau >= extinction {
                return Err(Error::Extinction {
                    radius: r,
                    time: tau,
                    extinction,
                });
            }
        }
        let fft = PeriodicFft::new(&grid);
        let center = grid.center();
        let mut inputs_hat = Vec::with_capacity(radii.len());
        let mut targets = Vec::with_capacity(radii.len());
        for &r in &radii {
            let u = sphere_phase_field(&grid, r, &center, eps)?;
            inputs_hat.push(fft.forward_real(u.values()));
            let t = target_field(&grid, circle_radius_mcf(r, tau, grid.dim())?, &center, eps)?;
            targets.push(t.into_values());
        }
        let n_params = op.kernel().weights().len() + op.mlp().theta().len();
        let adam = Adam::new(n_params, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
        let op = NeuralMcfOperator::new(op.kernel().clone(), op.mlp().clone(), tau, eps, grid.clone())?;
        Ok(Self {
            order: (0..radii.len()).collect(),
            cursor: radii.len(),
            cfg,
            grid,
            eps,
            op,
            adam,
            rng,
            fft,
            radii,
            inputs_hat,
            targets,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn operator(&self) -> &NeuralMcfOperator {
        &self.op
    }

    pub fn into_operator(self) -> NeuralMcfOperator {
        self.op
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn history(&self) -> &[TrainingRecord] {
        &self.history
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn held_out_loss(&self) -> Result<f64> {
        training_loss(&self.op, &self.cfg.held_out, &self.grid, self.eps)
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let b = self.cfg.batch_size;
        if self.cursor + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        batch
    }

    /// Mini-batch loss and its gradient with respect to `(K, theta)`, kernel
    /// weights first.
    pub fn batch_gradient(&self, batch: &[usize]) -> (f64, Vec<f64>) {
        let len = self.grid.len();
        let kernel = self.op.kernel();
        let mlp = self.op.mlp();
        let kernel_hat = crate::grid::kernel_spectrum(kernel, &self.grid, &self.fft);
        let n_k = kernel.weights().len();
        let mut grad = vec![0.0; n_k + mlp.theta().len()];
        let mut kernel_grad_hat = vec![Complex64::default(); len];
        let weight = 1.0 / (batch.len() * len) as f64;
        let mut d_inputs = vec![0.0; len];
        let mut loss = 0.0;
        for &i in batch {
            let mut s_hat = self.inputs_hat[i].clone();
            s_hat.iter_mut().zip(&kernel_hat).for_each(|(z, k)| *z *= k.conj());
            let s = self.fft.inverse_real(s_hat);
            loss += weight
                * mlp.squared_error_backprop(&s, &self.targets[i], weight, &mut grad[n_k..], &mut d_inputs);
            // dL/dK_b = sum_a g_a U_(a+b), a cross-correlation
            let g_hat = self.fft.forward_real(&d_inputs);
            for ((acc, g), u) in kernel_grad_hat.iter_mut().zip(&g_hat).zip(&self.inputs_hat[i]) {
                *acc += g.conj() * u;
            }
        }
        let corr = self.fft.inverse_real(kernel_grad_hat);
        let n = self.grid.n() as isize;
        let d = self.grid.dim();
        for (flat, g) in grad[..n_k].iter_mut().enumerate() {
            let off = kernel.offsets(flat);
            let mut idx = [0usize; 3];
            for a in 0..d {
                idx[a] = off[3 - d + a].rem_euclid(n) as usize;
            }
            *g = corr[self.grid.flat_index(&idx)];
        }
        (loss, grad)
    }

    /// Runs `iterations` Adam steps, calling `progress` at each record.
    pub fn run(&mut self, iterations: usize, mut progress: impl FnMut(&TrainingRecord)) -> Result<()> {
        let mut window = 0.0;
        let mut window_len = 0;
        let n_k = self.op.kernel().weights().len();
        let mut params = Vec::with_capacity(self.adam.m.len());
        for _ in 0..iterations {
            let batch = self.next_batch();
            let (loss, grad) = self.batch_gradient(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("training gradient"));
            }
            params.clear();
            params.extend_from_slice(self.op.kernel().weights());
            params.extend_from_slice(self.op.mlp().theta());
            let lr = self.cfg.learning_rate_at(self.iteration);
            self.adam.step(&mut params, &grad, lr);
            self.op.kernel_mut().weights_mut().copy_from_slice(&params[..n_k]);
            self.op.mlp_mut().theta_mut().copy_from_slice(&params[n_k..]);
            self.iteration += 1;
            window += loss;
            window_len += 1;
            if self.iteration % self.cfg.log_every == 0 {
                let record = TrainingRecord {
                    iteration: self.iteration,
                    batch_loss: window / window_len as f64,
                    held_out_loss: self.held_out_loss()?,
                };
                info!(
                    "iteration {}: batch loss {:.3e}, held-out loss {:.3e}",
                    record.iteration, record.batch_loss, record.held_out_loss
                );
                progress(&record);
                self.history.push(record);
                window = 0.0;
                window_len = 0;
            }
        }
        Ok(())
    }

    /// Errors if a loss target is configured and the held-out loss misses it.
    pub fn check_target(&self) -> Result<f64> {
        let loss = self.held_out_loss()?;
        match self.cfg.loss_target {
            Some(target) if !(loss <= target) => Err(Error::TrainingNotConverged {
                final_loss: loss,
                target,
            }),
            _ => Ok(loss),
        }
    }
}

/// Heat kernel of time `tau_tilde` on `grid`, cut to `width` and renormalized to unit sum,
/// with the network fitted to `phi^-1` on `[-1.05, 1.05]`.
pub fn heat_kernel_initialization(
    grid: &GridSpec,
    width: usize,
    layer_sizes: &[usize],
    tau_tilde: f64,
    eps: f64,
    fit_iterations: usize,
    rng: &mut impl Rng,
) -> Result<NeuralMcfOperator> {
    let ac = AllenCahnStepConfig::new(eps, tau_tilde)?;
    if !ac.is_monotone() {
        return Err(Error::NotMonotone { ratio: ac.ratio() });
    }
    let mut delta = vec![0.0; grid.len()];
    delta[0] = 1.0;
    let heat = SpectralSolver::new(grid).heat(&delta, tau_tilde);
    let mut kernel = StencilKernel::zeros(grid.dim(), width)?;
    let n = grid.n() as isize;
    let d = grid.dim();
    for flat in 0..kernel.weights().len() {
        let off = kernel.offsets(flat);
        let mut idx = [0usize; 3];
        for a in 0..d {
            idx[a] = off[3 - d + a].rem_euclid(n) as usize;
        }
        kernel.weights_mut()[flat] = heat[grid.flat_index(&idx[..d])];
    }
    let sum = kernel.sum();
    kernel.weights_mut().iter_mut().for_each(|w| *w /= sum);
    let mut mlp = MlpParams::random_normal(layer_sizes, rng)?;
    let inverse = |y: f64| soft_threshold_inverse(y, &ac).unwrap_or(f64::NAN);
    let loss = fit_mlp(&mut mlp, inverse, (-1.05, 1.05), 512, fit_iterations, 1e-2);
    if !loss.is_finite() {
        return Err(Error::NonFinite("network fit"));
    }
    info!("heat-kernel initialization: network fit error {loss:.3e}");
    NeuralMcfOperator::new(kernel, mlp, tau_tilde, eps, grid.clone())
}

fn initial_operator(
    cfg: &TrainingConfig,
    grid: &GridSpec,
    eps: f64,
    tau_tilde: f64,
    rng: &mut ChaCha8Rng,
) -> Result<NeuralMcfOperator> {
    let width = cfg.kernel_width(0);
    match cfg.init {
        Initialization::Zero => NeuralMcfOperator::initial(grid.clone(), width, &cfg.layer_sizes, tau_tilde, eps, rng),
        Initialization::HeatKernel => {
            heat_kernel_initialization(grid, width, &cfg.layer_sizes, tau_tilde, eps, cfg.init_fit_iterations, rng)
        }
    }
}

/// Trains a fresh operator on the centered spheres of `grid`, using the first
/// ladder rung's kernel width.
pub fn train_operator(cfg: &TrainingConfig, grid: &GridSpec, eps: f64, tau_tilde: f64) -> Result<NeuralMcfOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let op = initial_operator(cfg, grid, eps, tau_tilde, &mut rng)?;
    let mut trainer = Trainer::new(cfg.clone(), grid.clone(), op, cfg.seed)?;
    trainer.run(cfg.iterations, |_| {})?;
    trainer.check_target()?;
    Ok(trainer.into_operator())
}

/// Trains on each rung of `cfg.ladder` in turn (grids `(0,1)^d`), upsampling
/// the kernel and keeping the network between rungs.
///
/// Each rung draws its radii from seed `cfg.seed + rung`.
pub fn train_progressive(
    cfg: &TrainingConfig,
    dim: usize,
    eps: f64,
    tau_tilde: f64,
    mut on_rung: impl FnMut(usize, &Trainer) -> Result<()>,
) -> Result<Vec<NeuralMcfOperator>> {
    cfg.validate(0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut previous: Option<NeuralMcfOperator> = None;
    let mut out = Vec::with_capacity(cfg.ladder.len());
    let mut previous_loss = f64::INFINITY;
    for (rung, &n) in cfg.ladder.iter().enumerate() {
        let grid = GridSpec::unit(dim, n)?;
        let op = match previous.take() {
            None => initial_operator(cfg, &grid, eps, tau_tilde, &mut rng)?,
            Some(prev) => {
                let (coarse, mlp) = prev.into_parts();
                let mut k = upsample_kernel_bilinear(&coarse, cfg.kernel_width(rung))?;
                // the finer stencil has more nodes per unit area; keep K * 1 unchanged
                let (before, after) = (coarse.sum(), k.sum());
                if after != 0.0 && before != 0.0 {
                    k.weights_mut().iter_mut().for_each(|w| *w *= before / after);
                }
                NeuralMcfOperator::new(k, mlp, tau_tilde, eps, grid.clone())?
            }
        };
        let mut trainer = Trainer::new(cfg.clone(), grid, op, cfg.seed.wrapping_add(rung as u64))?;
        trainer.run(cfg.iterations, |_| {})?;
        let loss = trainer.check_target()?;
        if loss > previous_loss {
            warn!("held-out loss rose from {previous_loss:.3e} to {loss:.3e} at n = {n}");
        }
        previous_loss = loss;
        on_rung(rung, &trainer)?;
        let op = trainer.into_operator();
        previous = Some(op.clone());
        out.push(op);
    }
    Ok(out)
}

/// Least-squares fit of the network alone to `f` on `samples` points spread
/// evenly over `[a, b]`, by full-batch Adam.
pub fn fit_mlp(
    mlp: &mut MlpParams,
    f: impl Fn(f64) -> f64,
    (a, b): (f64, f64),
    samples: usize,
    iterations: usize,
    learning_rate: f64,
) -> f64 {
    let xs: Vec<f64> = (0..samples)
        .map(|i| a + (b - a) * i as f64 / (samples - 1).max(1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut adam = Adam::new(mlp.theta().len(), 0.9, 0.999, 1e-8);
    let mut grad = vec![0.0; mlp.theta().len()];
    let mut d_inputs = vec![0.0; samples];
    let weight = 1.0 / samples as f64;
    let mut loss = f64::INFINITY;
    for _ in 0..iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        loss = weight * mlp.squared_error_backprop(&xs, &ys, weight, &mut grad, &mut d_inputs);
        adam.step(mlp.theta_mut(), &grad, learning_rate);
    }
    loss
}
