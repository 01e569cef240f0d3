use log::warn;
use rand::Rng;

use super::MlpParams;
use crate::error::{Error, Result};
use crate::grid::{Convolver, GridSpec, NodalField, StencilKernel};
use crate::step::{McfLinearization, McfStep};

/// Learned one-step mean curvature flow map `V[U] = F(K * U)` together with the
/// regime it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralMcfOperator {
    kernel: StencilKernel,
    mlp: MlpParams,
    tau_tilde: f64,
    epsilon: f64,
    trained_grid: GridSpec,
}

impl NeuralMcfOperator {
    pub fn new(
        kernel: StencilKernel,
        mlp: MlpParams,
        tau_tilde: f64,
        epsilon: f64,
        trained_grid: GridSpec,
    ) -> Result<Self> {
        if !(tau_tilde > 0.0 && tau_tilde.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau_tilde = {tau_tilde}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon = {epsilon}")));
        }
        if kernel.dim() != trained_grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: trained_grid.dim(),
                found: kernel.dim(),
            });
        }
        if kernel.width() > trained_grid.n() {
            return Err(Error::KernelTooWide {
                width: kernel.width(),
                n: trained_grid.n(),
            });
        }
        Ok(Self {
            kernel,
            mlp,
            tau_tilde,
            epsilon,
            trained_grid,
        })
    }

    /// Zero kernel and normally distributed network parameters.
    pub fn initial(
        trained_grid: GridSpec,
        kernel_width: usize,
        layer_sizes: &[usize],
        tau_tilde: f64,
        epsilon: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let kernel = StencilKernel::zeros(trained_grid.dim(), kernel_width)?;
        let mlp = MlpParams::random_normal(layer_sizes, rng)?;
        Self::new(kernel, mlp, tau_tilde, epsilon, trained_grid)
    }

    pub fn kernel(&self) -> &StencilKernel {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut StencilKernel {
        &mut self.kernel
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpParams {
        &mut self.mlp
    }

    pub fn tau_tilde(&self) -> f64 {
        self.tau_tilde
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn trained_grid(&self) -> &GridSpec {
        &self.trained_grid
    }

    pub fn into_parts(self) -> (StencilKernel, MlpParams) {
        (self.kernel, self.mlp)
    }

    /// Prepares the operator for repeated use on fields of `spec`.
    ///
    /// A spacing different from the training grid is allowed but logged, since
    /// the stencil then covers a different physical neighbourhood.
    pub fn bind(&self, spec: &GridSpec) -> Result<BoundOperator<'_>> {
        if spec.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: spec.dim(),
            });
        }
        let (h, h0) = (spec.h(), self.trained_grid.h());
        if ((h - h0) / h0).abs() > 1e-9 {
            warn!("operator trained at h = {h0} applied at h = {h}");
        }
        Ok(BoundOperator {
            op: self,
            convolver: Convolver::new(&self.kernel, spec)?,
        })
    }
}

/// A [`NeuralMcfOperator`] with its convolution prepared for one grid.
#[derive(Debug, Clone)]
pub struct BoundOperator<'a> {
    op: &'a NeuralMcfOperator,
    convolver: Convolver,
}

impl BoundOperator<'_> {
    pub fn operator(&self) -> &NeuralMcfOperator {
        self.op
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut s = self.convolver.apply(u);
        let input = s.clone();
        self.op.mlp.forward_batch(&input, &mut s);
        s
    }
}

/// `F(K * U)`, `F'(K * U)` and `F''(K * U)` at one state.
#[derive(Debug, Clone)]
pub struct NeuralLinearization<'a> {
    convolver: &'a Convolver,
    value: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl McfStep for BoundOperator<'_> {
    type Linearization<'s>
        = NeuralLinearization<'s>
    where
        Self: 's;

    fn spec(&self) -> &GridSpec {
        self.convolver.spec()
    }

    fn step(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(u))
    }

    fn linearize(&self, u: &[f64]) -> Result<NeuralLinearization<'_>> {
        let s = self.convolver.apply(u);
        let len = s.len();
        let (mut value, mut d1, mut d2) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        self.op.mlp.forward_batch_derivatives(&s, &mut value, &mut d1, &mut d2);
        Ok(NeuralLinearization {
            convolver: &self.convolver,
            value,
            d1,
            d2,
        })
    }
}

impl McfLinearization for NeuralLinearization<'_> {
    fn value(&self) -> &[f64] {
        &self.value
    }

    fn jvp(&self, p: &[f64]) -> Vec<f64> {
        let mut kp = self.convolver.apply(p);
        kp.iter_mut().zip(&self.d1).for_each(|(v, d)| *v *= d);
        kp
    }

    fn vjp(&self, w: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = w.iter().zip(&self.d1).map(|(w, d)| w * d).collect();
        self.convolver.apply_adjoint(&weighted)
    }

    fn curvature(&self, g: &[f64]) -> Box<dyn Fn(&[f64]) -> Vec<f64> + '_> {
        let gd2: Vec<f64> = g.iter().zip(&self.d2).map(|(g, d)| g * d).collect();
        Box::new(move |p| {
            let mut kp = self.convolver.apply(p);
            kp.iter_mut().zip(&gd2).for_each(|(v, c)| *v *= c);
            self.convolver.apply_adjoint(&kp)
        })
    }
}

fn check_field(op: &NeuralMcfOperator, u: &NodalField) -> Result<()> {
    if u.spec().dim() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            found: u.spec().dim(),
        });
    }
    Ok(())
}

/// `V[U] = F(K * U)`.
pub fn apply_operator(op: &NeuralMcfOperator, u: &NodalField) -> Result<NodalField> {
    check_field(op, u)?;
    let bound = op.bind(u.spec())?;
    u.with_values(bound.apply(u.values()))
}

/// `F'(K * U) (K * P)`.
pub fn operator_jvp(op: &NeuralMcfOperator, u: &NodalField, p: &NodalField) -> Result<NodalField> {
    check_field(op, u)?;
    u.spec().check_same(p.spec())?;
    let bound = op.bind(u.spec())?;
    let lin = bound.linearize(u.values())?;
    p.with_values(lin.jvp(p.values()))
}

/// `K~ * (F'(K * U) W)` with `K~` the flipped kernel.
pub fn operator_vjp(op: &NeuralMcfOperator, u: &NodalField, w: &NodalField) -> Result<NodalField> {
    check_field(op, u)?;
    u.spec().check_same(w.spec())?;
    let bound = op.bind(u.spec())?;
    let lin = bound.linearize(u.values())?;
    w.with_values(lin.vjp(w.values()))
}
