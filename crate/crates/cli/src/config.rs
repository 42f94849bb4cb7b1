//! Run configuration: a single TOML file with a strict schema.

use crate::CliError;
use ras_core::artifact::Stamp;
use ras_core::ddpg::DdpgConfig;
use ras_core::grid::GridSpec;
use ras_core::sim::{DisturbanceMode, DEFAULT_HORIZON, DEFAULT_SAMPLE_FRACTION};
use ras_core::solver::qlearn::QLearnConfig;
use ras_core::solver::{SolverConfig, SweepScheme};
use ras_core::system::{Benchmark, ControlSystem, Interval, SystemModel, DEFAULT_DT};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub const OUT_DIR_ENV: &str = "RAS_OUT_DIR";
pub const THREADS_ENV: &str = "RAS_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qlearn: Option<QLearnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ddpg: Option<DdpgConfig>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub gamma: f64,
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Lattice points per control dimension; benchmark default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disturbance_counts: Option<Vec<usize>>,
    pub sweep: SweepKind,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            tolerance: 1e-6,
            max_sweeps: 20_000,
            control_counts: None,
            disturbance_counts: None,
            sweep: SweepKind::Jacobi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Jacobi,
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Switching policy over the tabular `H_g`, `π_V` and `π_H`.
    Ras,
    /// Greedy policy of the reach-avoid baseline `V_RA`.
    Ra,
    /// Switching policy built from the trained networks.
    Ddpg,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Ras => "ras",
            PolicyKind::Ra => "ra",
            PolicyKind::Ddpg => "ddpg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Initial states sampled for `evaluate`.
    pub count: usize,
    pub horizon: usize,
    /// Sampling threshold as a fraction of the `V` range.
    pub threshold_fraction: f64,
    pub modes: Vec<DisturbanceMode>,
    pub policies: Vec<PolicyKind>,
    /// Start state for `simulate`; benchmark default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            count: 1000,
            horizon: DEFAULT_HORIZON,
            threshold_fraction: DEFAULT_SAMPLE_FRACTION,
            modes: vec![DisturbanceMode::Random],
            policies: vec![PolicyKind::Ras, PolicyKind::Ra],
            initial_state: None,
        }
    }
}

/// Two-dimensional slice for figures of higher-dimensional grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSection {
    /// State dimensions on the horizontal and vertical axes.
    pub axes: [usize; 2],
    /// Values of the remaining dimensions, in order.
    #[serde(default)]
    pub fixed: Vec<f64>,
    /// Pixels per grid cell in the raster output.
    #[serde(default = "default_pixels")]
    pub pixels_per_cell: usize,
}

fn default_pixels() -> usize {
    2
}

impl RenderSection {
    /// First two dimensions, the rest fixed at zero.
    pub fn for_dim(n: usize) -> Self {
        Self {
            axes: [0, 1],
            fixed: vec![0.0; n.saturating_sub(2)],
            pixels_per_cell: default_pixels(),
        }
    }
}

pub fn default_grid(benchmark: Benchmark) -> GridSection {
    match benchmark {
        Benchmark::Cart2d => GridSection {
            lower: vec![-6.0, -4.0],
            upper: vec![6.0, 4.0],
            counts: vec![241, 161],
        },
        Benchmark::Chase4d => GridSection {
            lower: vec![-2.0, -2.0, -1.5, -1.5],
            upper: vec![2.0, 2.0, 1.5, 1.5],
            counts: vec![31; 4],
        },
    }
}

pub fn default_lattices(benchmark: Benchmark) -> (Vec<usize>, Vec<usize>) {
    match benchmark {
        Benchmark::Cart2d => (vec![11], vec![9]),
        Benchmark::Chase4d => (vec![5; 2], vec![3; 2]),
    }
}

pub fn default_initial_state(benchmark: Benchmark) -> Vec<f64> {
    match benchmark {
        Benchmark::Cart2d => vec![4.5, 0.0],
        Benchmark::Chase4d => vec![1.8, 0.0, 0.0, 0.5],
    }
}

impl RunConfig {
    pub fn new(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            master_seed: 0,
            output_dir: default_output_dir(),
            dt: DEFAULT_DT,
            grid: None,
            solver: SolverSection::default(),
            qlearn: None,
            ddpg: None,
            evaluation: EvaluationSection::default(),
            render: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies the output-directory environment override.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        self
    }

    /// SHA-256 of the serialized configuration with the output directory
    /// blanked, so relocating a run keeps its hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn stamp(&self) -> Stamp {
        Stamp {
            config_hash: self.hash(),
            master_seed: self.master_seed,
        }
    }

    pub fn system(&self) -> Result<SystemModel, CliError> {
        SystemModel::from_benchmark(self.benchmark, self.dt)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid_section(&self) -> GridSection {
        self.grid
            .clone()
            .unwrap_or_else(|| default_grid(self.benchmark))
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let g = self.grid_section();
        GridSpec::from_bounds(&g.lower, &g.upper, &g.counts)
            .map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn domain(&self) -> Vec<Interval> {
        let g = self.grid_section();
        g.lower
            .iter()
            .zip(&g.upper)
            .map(|(&a, &b)| Interval::new(a, b))
            .collect()
    }

    pub fn lattice_counts(&self) -> (Vec<usize>, Vec<usize>) {
        let (cu, cd) = default_lattices(self.benchmark);
        (
            self.solver.control_counts.clone().unwrap_or(cu),
            self.solver.disturbance_counts.clone().unwrap_or(cd),
        )
    }

    pub fn solver_config(&self, system: &SystemModel) -> Result<SolverConfig, CliError> {
        let (cu, cd) = self.lattice_counts();
        let mut c = SolverConfig::for_system(system, &cu, &cd)
            .map_err(|e| CliError::Config(format!("solver: {e}")))?;
        c.gamma = self.solver.gamma;
        c.tolerance = self.solver.tolerance;
        c.max_sweeps = self.solver.max_sweeps;
        c.sweep = match self.solver.sweep {
            SweepKind::Jacobi => SweepScheme::Jacobi,
            SweepKind::GaussSeidel => SweepScheme::GaussSeidel,
        };
        c.validate()
            .map_err(|e| CliError::Config(format!("solver: {e}")))?;
        Ok(c)
    }

    pub fn qlearn_config(&self) -> QLearnConfig {
        self.qlearn.clone().unwrap_or_default()
    }

    pub fn ddpg_config(&self) -> DdpgConfig {
        self.ddpg.clone().unwrap_or_default()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.evaluation
            .initial_state
            .clone()
            .unwrap_or_else(|| default_initial_state(self.benchmark))
    }

    pub fn render_section(&self) -> RenderSection {
        self.render
            .clone()
            .unwrap_or_else(|| RenderSection::for_dim(self.grid_section().lower.len()))
    }

    /// Cross-section consistency checks.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let system = self.system()?;
        let n = system.state_dim();
        let g = self.grid_section();
        if g.lower.len() != n || g.upper.len() != n || g.counts.len() != n {
            return bad(format!(
                "grid: {} needs {n} entries in lower, upper and counts",
                self.benchmark
            ));
        }
        self.grid_spec()?;
        let (cu, cd) = self.lattice_counts();
        if cu.len() != system.control_dim() {
            return bad(format!(
                "solver.control_counts: expected {} entries",
                system.control_dim()
            ));
        }
        if cd.len() != system.disturbance_dim() {
            return bad(format!(
                "solver.disturbance_counts: expected {} entries",
                system.disturbance_dim()
            ));
        }
        self.solver_config(&system)?;
        if let Some(q) = &self.qlearn {
            q.validate()
                .map_err(|e| CliError::Config(format!("qlearn: {e}")))?;
        }
        if let Some(d) = &self.ddpg {
            d.validate()
                .map_err(|e| CliError::Config(format!("ddpg: {e}")))?;
        }
        let e = &self.evaluation;
        if e.count == 0 {
            return bad("evaluation.count must be at least 1".into());
        }
        if e.horizon == 0 {
            return bad("evaluation.horizon must be at least 1".into());
        }
        if !(e.threshold_fraction.is_finite() && e.threshold_fraction >= 0.0) {
            return bad("evaluation.threshold_fraction must be non-negative".into());
        }
        if e.modes.is_empty() || e.policies.is_empty() {
            return bad("evaluation.modes and evaluation.policies must be non-empty".into());
        }
        if self.initial_state().len() != n {
            return bad(format!("evaluation.initial_state: expected {n} entries"));
        }
        let r = self.render_section();
        if r.axes[0] == r.axes[1] || r.axes.iter().any(|&a| a >= n) {
            return Err(CliError::Slice(format!(
                "render.axes {:?} must be two distinct dimensions below {n}",
                r.axes
            )));
        }
        if r.fixed.len() != n - 2 {
            return Err(CliError::Slice(format!(
                "render.fixed: expected {} values, got {}",
                n - 2,
                r.fixed.len()
            )));
        }
        if r.pixels_per_cell == 0 {
            return bad("render.pixels_per_cell must be at least 1".into());
        }
        Ok(())
    }
}
