//! Experiment configuration: one TOML document plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use willmore_core::grid::GridSpec;
use willmore_core::neural::TrainingConfig;
use willmore_core::phase_field::Shape;
use willmore_core::reference::AllenCahnStepConfig;
use willmore_core::willmore::{HessianMode, WillmoreConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Train,
    ValidateMcf,
    ValidateWillmore,
    Flow,
    Inpaint,
}

/// Inner mean curvature step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Neural,
    SemiImplicit,
    Implicit,
    /// Heat step followed by the inverse soft threshold.
    Mbo,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Neural => "neural",
            Method::SemiImplicit => "semi-implicit",
            Method::Implicit => "implicit",
            Method::Mbo => "mbo",
        }
    }
}

/// The cube `[lower, upper)^dim` with `n` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            n: 256,
            lower: -1.0,
            upper: 1.0,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        self.spec_with_n(self.n)
    }

    pub fn spec_with_n(&self, n: usize) -> Result<GridSpec> {
        Ok(GridSpec::new(self.dim, n, vec![self.lower; self.dim], self.upper - self.lower)?)
    }
}

/// Radii `start + span * i / count` for `i = 0..count`, centered in the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiiFamily {
    pub count: usize,
    pub start: f64,
    pub span: f64,
}

impl Default for RadiiFamily {
    fn default() -> Self {
        Self {
            count: 30,
            start: 0.05 * std::f64::consts::PI,
            span: 0.15 * std::f64::consts::PI,
        }
    }
}

impl RadiiFamily {
    pub fn radii(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| self.start + self.span * i as f64 / self.count as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotConfig {
    /// Steps at which fields are written; step 0 is the initial state.
    pub steps: Vec<usize>,
    /// Times converted to steps of size `tau`; each must be a whole number of steps.
    pub times: Vec<f64>,
    /// Additionally write every this many steps.
    pub every: Option<usize>,
    /// Also write grayscale images (2D fields, or slices of 3D fields).
    pub images: bool,
    /// Axis normal to the exported slice of 3D fields.
    pub slice_axis: usize,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            steps: vec![0],
            times: Vec::new(),
            every: None,
            images: true,
            slice_axis: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_grad_tol: f64,
    pub newton_max_iter: usize,
    pub cg_rel_tol: f64,
    pub cg_max_iter: usize,
    pub armijo_slope: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub hessian_mode: HessianMode,
    pub jacobi_preconditioner: bool,
    /// Residual target of the implicit Allen-Cahn step.
    pub implicit_newton_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_grad_tol: 1e-8,
            newton_max_iter: 50,
            cg_rel_tol: 1e-6,
            cg_max_iter: 500,
            armijo_slope: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            hessian_mode: HessianMode::Full,
            jacobi_preconditioner: false,
            implicit_newton_tol: 1e-9,
        }
    }
}

/// Finer-resolution run used as ground truth when no closed form exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub n: usize,
    pub inner: Method,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            n: 512,
            inner: Method::Implicit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// When present, must match the subcommand.
    pub kind: Option<Kind>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Set when the run is scaled down from the published resolution.
    pub desk_scale: bool,
    pub grid: GridConfig,
    pub eps: f64,
    /// Outer Willmore step.
    pub tau: f64,
    /// Inner mean curvature step.
    pub tau_tilde: f64,
    pub checkpoint: Option<PathBuf>,
    pub training: TrainingConfig,
    pub radii: RadiiFamily,
    pub steps: usize,
    /// Methods compared by the validation commands.
    pub methods: Vec<Method>,
    /// Inner step of `flow` and `inpaint`.
    pub inner: Method,
    /// Initial shape; alternatively `input_field`.
    pub shape: Option<Shape>,
    pub input_field: Option<PathBuf>,
    /// Region D whose nodes may change during inpainting.
    pub region: Option<Shape>,
    /// Non-circular shape evolved by `validate-willmore` against `reference`.
    pub test_shape: Option<Shape>,
    pub reference: ReferenceConfig,
    pub snapshots: SnapshotConfig,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            kind: None,
            seed: 0,
            output_dir: PathBuf::from("out"),
            desk_scale: false,
            grid: GridConfig::default(),
            eps: 2f64.powi(-6),
            tau: 2f64.powi(-18),
            tau_tilde: 2f64.powi(-14),
            checkpoint: None,
            training: TrainingConfig::default(),
            radii: RadiiFamily::default(),
            steps: 64,
            methods: vec![Method::Neural, Method::SemiImplicit, Method::Implicit],
            inner: Method::Neural,
            shape: None,
            input_field: None,
            region: None,
            test_shape: None,
            reference: ReferenceConfig::default(),
            snapshots: SnapshotConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `path` (or starts from defaults) and applies `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>().map_err(|source| CliError::Toml {
                    path: p.to_path_buf(),
                    source,
                })?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            CliError::Toml {
                path: path.map(Path::to_path_buf).unwrap_or_default(),
                source: e,
            }
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        self.grid.spec()
    }

    pub fn allen_cahn(&self) -> Result<AllenCahnStepConfig> {
        let mut ac = AllenCahnStepConfig::new(self.eps, self.tau_tilde)?;
        ac.newton_tol = self.solver.implicit_newton_tol;
        Ok(ac)
    }

    pub fn willmore(&self) -> Result<WillmoreConfig> {
        let s = &self.solver;
        let mut w = WillmoreConfig::new(self.tau, self.tau_tilde, self.eps)?;
        w.newton_grad_tol = s.newton_grad_tol;
        w.newton_max_iter = s.newton_max_iter;
        w.cg_rel_tol = s.cg_rel_tol;
        w.cg_max_iter = s.cg_max_iter;
        w.armijo_slope = s.armijo_slope;
        w.backtrack_factor = s.backtrack_factor;
        w.max_backtracks = s.max_backtracks;
        w.hessian_mode = s.hessian_mode;
        w.jacobi_preconditioner = s.jacobi_preconditioner;
        w.validate()?;
        Ok(w)
    }

    /// Checks the settings `kind` depends on, including that input paths exist.
    pub fn validate(&self, kind: Kind) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(k) = self.kind {
            if k != kind {
                return bad(format!("configuration is for {k:?}, not {kind:?}"));
            }
        }
        if !(self.eps > 0.0 && self.tau_tilde > 0.0 && self.tau > 0.0) {
            return bad("eps, tau and tau_tilde must be positive".into());
        }
        if !(self.grid.upper > self.grid.lower) {
            return bad("grid.upper must exceed grid.lower".into());
        }
        let spec = self.grid_spec()?;
        let needs_operator = match kind {
            Kind::Train => {
                self.training.validate(0.5)?;
                for (rung, &n) in self.training.ladder.iter().enumerate() {
                    let w = self.training.kernel_width(rung);
                    if w % 2 == 0 || w > n {
                        return bad(format!("kernel width {w} must be odd and at most n = {n}"));
                    }
                }
                false
            }
            Kind::ValidateMcf | Kind::ValidateWillmore => {
                if self.methods.is_empty() {
                    return bad("no methods to compare".into());
                }
                if self.radii.count == 0 {
                    return bad("empty radius family".into());
                }
                let half = 0.5 * (self.grid.upper - self.grid.lower);
                let largest = self.radii.start + self.radii.span * (self.radii.count - 1) as f64 / self.radii.count as f64;
                if !(self.radii.start > 0.0) || largest >= half {
                    return bad(format!("radii must lie in (0, {half})"));
                }
                if kind == Kind::ValidateWillmore && self.methods.contains(&Method::Mbo) {
                    return bad("the mbo step cannot drive a Willmore flow".into());
                }
                if let Some(s) = &self.test_shape {
                    if self.reference.inner == Method::Mbo {
                        return bad("the mbo step cannot drive a Willmore flow".into());
                    }
                    self.check_shape(s, "test_shape")?;
                    if self.reference.n < self.grid.n || self.reference.n % self.grid.n != 0 {
                        return bad("reference.n must be a multiple of grid.n".into());
                    }
                }
                self.methods.contains(&Method::Neural)
                    || (self.test_shape.is_some() && self.reference.inner == Method::Neural)
            }
            Kind::Flow | Kind::Inpaint => {
                match (&self.shape, &self.input_field) {
                    (Some(s), None) => self.check_shape(s, "shape")?,
                    (None, Some(p)) => check_exists(p)?,
                    _ => return bad("exactly one of shape and input_field is required".into()),
                }
                if kind == Kind::Inpaint {
                    match &self.region {
                        Some(r) => self.check_shape(r, "region")?,
                        None => return bad("inpainting needs a region".into()),
                    }
                }
                if spec.dim() == 3 && self.snapshots.slice_axis >= 3 {
                    return bad(format!("snapshots.slice_axis must be below {}", spec.dim()));
                }
                if self.inner == Method::Mbo {
                    return bad("the mbo step cannot drive a Willmore flow".into());
                }
                self.snapshot_steps()?;
                self.inner == Method::Neural
            }
        };
        if needs_operator {
            match &self.checkpoint {
                Some(p) => check_exists(p)?,
                None => return bad("a checkpoint is required for the neural method".into()),
            }
        }
        Ok(())
    }

    fn check_shape(&self, shape: &Shape, what: &str) -> Result<()> {
        shape
            .validate(self.grid.dim)
            .map_err(|e| CliError::Config(format!("{what}: {e}")))?;
        if let Some((lo, hi)) = shape.bounds(self.grid.dim) {
            if lo.iter().any(|&l| l < self.grid.lower) || hi.iter().any(|&h| h > self.grid.upper) {
                return Err(CliError::Config(format!("{what} leaves the domain")));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated snapshot steps within `0..=steps`.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = self.snapshots.steps.iter().copied().filter(|&s| s <= self.steps).collect();
        for &t in &self.snapshots.times {
            let k = t / self.tau;
            if !(k >= 0.0) || (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                return Err(CliError::Config(format!("time {t} is not a whole number of steps of {}", self.tau)));
            }
            let k = k.round() as usize;
            if k <= self.steps {
                out.push(k);
            }
        }
        if let Some(e) = self.snapshots.every.filter(|&e| e > 0) {
            out.extend((0..=self.steps).step_by(e));
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

fn check_exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} does not exist", p.display())))
    }
}

/// Sets `a.b.c = value` in `table`, creating intermediate tables. The value
/// is read as a TOML value when it parses as one and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{part} in {key:?} is not a table")))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
