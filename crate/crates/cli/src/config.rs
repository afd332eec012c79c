//! Versioned scenario configuration. Unknown keys are rejected so a run
//! manifest pins the exact inputs.

use oralab_core::{
    AtomList, DensityGrid, Grid, QuantileCurve, RabData, RaqData, RemovalDetail, Schedule,
    SourceMeasure,
};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub model: Model,
    pub grid: GridSpec,
    pub u0: DensitySpec,
    #[serde(default)]
    pub pi: Option<SourceSpec>,
    #[serde(default)]
    pub injection: Option<ScheduleSpec>,
    #[serde(default)]
    pub removal: Option<ScheduleSpec>,
    #[serde(default)]
    pub q: Option<QuantileSpec>,
    pub horizon: f64,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub compare: Option<CompareSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Rab,
    Raq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform { a: f64, b: f64 },
    Gaussian { mean: f64, std: f64 },
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub atoms: Vec<(f64, f64)>,
    #[serde(default)]
    pub density: Option<DensitySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Zero,
    Linear { rate: f64 },
    Piecewise { points: Vec<(f64, f64)> },
    Power { coeff: f64, exponent: f64 },
    Capped { cap: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuantileSpec {
    ConstQ { level: f64 },
    PiecewiseQ { points: Vec<(f64, f64)> },
    PiecewiseSmall { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// Upper-barrier safety margins to sweep.
    pub margins: Vec<f64>,
    /// Step sizes to sweep.
    pub steps: Vec<f64>,
    #[serde(default = "default_sub_steps")]
    pub sub_steps: usize,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub removal_detail: DetailSpec,
}

fn default_sub_steps() -> usize {
    1
}

fn default_stride() -> usize {
    1
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            margins: vec![0.05],
            steps: vec![1e-3],
            sub_steps: 1,
            kernel: KernelSpec::Auto,
            stride: 1,
            removal_detail: DetailSpec::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    #[default]
    Auto,
    Direct,
    Fft,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetailSpec {
    #[default]
    Full,
    Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub particles: Vec<usize>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_replicas() -> usize {
    4
}

fn default_seed() -> u64 {
    7
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            particles: vec![1000],
            replicas: 4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_r_values")]
    pub r_values: usize,
    #[serde(default = "default_true")]
    pub emit_density: bool,
    #[serde(default)]
    pub emit_plots: bool,
}

fn default_r_values() -> usize {
    64
}

fn default_true() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            snapshot_times: Vec::new(),
            r_values: 64,
            emit_density: true,
            emit_plots: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompareSpec {
    /// Barrier midpoint versus empirical tails across population sizes.
    Hydro,
    /// Paired run with the removal clock scaled up.
    Dominance { removal_factor: f64 },
    /// Quantile removal at level zero against boundary removal.
    CrossModel,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl Scenario {
    pub fn from_json(bytes: &[u8]) -> Result<Scenario, ConfigError> {
        let s: Scenario =
            serde_json::from_slice(bytes).map_err(|e| ConfigError(e.to_string()))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(ConfigError(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.model {
            Model::Rab => {
                if self.pi.is_none() {
                    return Err(ConfigError(
                        "boundary-removal scenarios need an injection source `pi`".into(),
                    ));
                }
                if self.q.is_some() {
                    return Err(ConfigError(
                        "`q` only applies to quantile-removal scenarios".into(),
                    ));
                }
            }
            Model::Raq => {
                if self.q.is_none() {
                    return Err(ConfigError(
                        "quantile-removal scenarios need a quantile curve `q`".into(),
                    ));
                }
                if self.pi.is_some() || self.injection.is_some() || self.removal.is_some() {
                    return Err(ConfigError(
                        "`pi`, `injection`, and `removal` only apply to boundary removal".into(),
                    ));
                }
            }
        }
        if self.solver.margins.is_empty() || self.solver.steps.is_empty() {
            return Err(ConfigError("solver sweep lists must be nonempty".into()));
        }
        if self.simulation.particles.is_empty() {
            return Err(ConfigError("simulation particle list must be nonempty".into()));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid.x_min, self.grid.x_max, self.grid.n_cells)
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn build_density(&self, spec: &DensitySpec, grid: Grid) -> Result<DensityGrid, ConfigError> {
        let build = |spec: &DensitySpec| -> oralab_core::Result<DensityGrid> {
            match spec {
                DensitySpec::Uniform { a, b } => DensityGrid::uniform_slab(grid, *a, *b, 1.0),
                DensitySpec::Gaussian { mean, std } => {
                    DensityGrid::gaussian(grid, *mean, *std, 1.0)
                }
                DensitySpec::PiecewiseConstant { breaks, values } => {
                    DensityGrid::piecewise_constant(grid, breaks, values)
                }
            }
        };
        build(spec).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn build_schedule(spec: &ScheduleSpec) -> Schedule {
        match spec {
            ScheduleSpec::Zero => Schedule::zero(),
            ScheduleSpec::Linear { rate } => Schedule::LinearRate { rate: *rate },
            ScheduleSpec::Piecewise { points } => Schedule::PiecewiseLinear {
                points: points.clone(),
            },
            ScheduleSpec::Power { coeff, exponent } => Schedule::Power {
                coeff: *coeff,
                exponent: *exponent,
            },
            ScheduleSpec::Capped { cap } => Schedule::CappedIdentity { cap: *cap },
        }
    }

    pub fn build_rab(&self) -> Result<RabData, ConfigError> {
        let grid = self.build_grid()?;
        let u0 = self.build_density(&self.u0, grid)?;
        let pi_spec = self
            .pi
            .as_ref()
            .ok_or_else(|| ConfigError("missing injection source".into()))?;
        let atoms = AtomList::new(pi_spec.atoms.clone()).map_err(|e| ConfigError(e.to_string()))?;
        let density = match &pi_spec.density {
            Some(d) => Some(self.build_density(d, grid)?),
            None => None,
        };
        let data = RabData {
            u0,
            pi: SourceMeasure { atoms, density },
            injection: self
                .injection
                .as_ref()
                .map(Self::build_schedule)
                .unwrap_or_else(Schedule::zero),
            removal: self
                .removal
                .as_ref()
                .map(Self::build_schedule)
                .unwrap_or_else(Schedule::zero),
            horizon: self.horizon,
        };
        data.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(data)
    }

    pub fn build_raq(&self) -> Result<RaqData, ConfigError> {
        let grid = self.build_grid()?;
        let u0 = self.build_density(&self.u0, grid)?;
        let q = match self.q.as_ref().unwrap() {
            QuantileSpec::ConstQ { level } => QuantileCurve::ConstQ { level: *level },
            QuantileSpec::PiecewiseQ { points } => QuantileCurve::PiecewiseLinearQ {
                points: points.clone(),
            },
            QuantileSpec::PiecewiseSmall { points } => QuantileCurve::PiecewiseLinearSmall {
                points: points.clone(),
            },
        };
        let data = RaqData {
            u0,
            q,
            horizon: self.horizon,
        };
        data.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(data)
    }

    pub fn solve_options(&self) -> oralab_core::SolveOptions {
        oralab_core::SolveOptions {
            kernel: match self.solver.kernel {
                KernelSpec::Auto => oralab_core::KernelMethod::Auto,
                KernelSpec::Direct => oralab_core::KernelMethod::Direct,
                KernelSpec::Fft => oralab_core::KernelMethod::Fft,
            },
            sub_steps: self.solver.sub_steps,
            stride: self.solver.stride,
            removal_detail: match self.solver.removal_detail {
                DetailSpec::Full => RemovalDetail::Full,
                DetailSpec::Summary => RemovalDetail::Summary,
            },
            ..Default::default()
        }
    }
}
