//! Run configuration read from a TOML file.
//!
//! Every key is optional. A minimal simulation run:
//!
//! ```toml
//! seed = 3
//! [data]
//! source = "sim"
//! candidate = "s_0"
//! [data.sim]
//! d = 10
//! [solver]
//! gamma = 0.5
//! ```
//!
//! Defaults follow the simulation study: B-splines with `m = 5`, degree 3;
//! Gaussian kernel with `h = 0.1`; 25 grid points; `gamma = 0.5`;
//! `lambda = 0`; `epsilon = 1e-6`; three policy iterations. The default
//! solver is the direct ridge-regularized solve; set
//! `solver.method = "coordinate-descent"` with `lambda > 0` for sparse fits.
//! Without a penalty, coordinate descent can fail to settle at sparsely
//! supported grid points when `gamma > 0`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisSpec};
use crate::data::{ActionKind, CandidateChoice, CandidateSource, TrajectorySchema};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::modelsel::{HyperGrid, HyperParams, Loss};
use crate::policy::PolicyIterationConfig;
use crate::sim::SimConfig;
use crate::solver::{even_grid, FitMethod, SolverConfig, ThresholdConvention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of all randomness in a run.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub mode: Mode,
    pub data: DataConfig,
    pub basis: BasisConfig,
    pub kernel: KernelConfig,
    pub grid: GridConfig,
    pub solver: SolverSection,
    pub policy: PolicySection,
    pub regret: RegretSection,
    pub cv: CvSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 0,
            mode: Mode::Discrete,
            data: DataConfig::default(),
            basis: BasisConfig::default(),
            kernel: KernelConfig::default(),
            grid: GridConfig::default(),
            solver: SolverSection::default(),
            policy: PolicySection::default(),
            regret: RegretSection::default(),
            cv: CvSection::default(),
            export: ExportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Sim,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Trajectory CSV with columns `traj_id, t, s_0.., action, reward`.
    pub path: Option<PathBuf>,
    /// `s_<j>` for a state feature, `action` for the continuous action,
    /// anything else names a CSV column.
    pub candidate: String,
    /// Number of discrete actions; inferred from the data when absent.
    pub actions: Option<usize>,
    pub sim: SimSection,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::Sim, path: None, candidate: "s_0".into(), actions: None, sim: SimSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub d: usize,
    pub sigma: f64,
    pub correlation: f64,
    /// Number of episodes.
    pub n: usize,
    /// Steps per episode.
    pub ell: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self { d: sim.d, sigma: sim.sigma, correlation: sim.correlation, n: 100, ell: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub family: BasisFamily,
    pub m: usize,
    pub degree: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { family: BasisFamily::Bspline, m: 5, degree: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { family: KernelFamily::Gaussian, bandwidth: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Evenly spaced points on `[0, 1]`.
    pub size: usize,
    /// Explicit normalized grid; overrides `size`.
    pub points: Option<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { size: 25, points: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    CoordinateDescent,
    #[default]
    Analytic,
}

impl From<MethodName> for FitMethod {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::CoordinateDescent => FitMethod::CoordinateDescent,
            MethodName::Analytic => FitMethod::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: MethodName,
    pub gamma: f64,
    pub lambda: f64,
    /// Step size; per-group `relaxation / |A_gg|` when absent.
    pub mu: Option<f64>,
    /// Factor on the automatic per-group step.
    pub relaxation: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub ridge: f64,
    pub threshold: ThresholdConvention,
    pub divergence_bound: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            method: MethodName::Analytic,
            gamma: 0.5,
            lambda: s.lambda,
            mu: s.mu,
            relaxation: s.relaxation,
            epsilon: s.epsilon,
            max_iter: s.max_iter,
            ridge: s.ridge,
            threshold: s.threshold,
            divergence_bound: s.divergence_bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub max_iters: usize,
    pub frob_epsilon: f64,
    /// Model whose greedy policy is evaluated first; the behavior policy when absent.
    pub initial_model: Option<PathBuf>,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyIterationConfig::default();
        Self { max_iters: p.max_policy_iters, frob_epsilon: p.frob_epsilon, initial_model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretSection {
    pub episodes: usize,
    pub ell: usize,
    /// Policy to evaluate; trained by policy iteration on the configured data when absent.
    pub model: Option<PathBuf>,
}

impl Default for RegretSection {
    fn default() -> Self {
        Self { episodes: 1000, ell: 10, model: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    #[default]
    Bellman,
    ValidationMse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub loss: LossName,
    /// Candidate values per hyperparameter; the single-run value when absent.
    pub m: Option<Vec<usize>>,
    pub degree: Option<Vec<usize>>,
    pub bandwidth: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub grid_size: Option<Vec<usize>>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { folds: 5, loss: LossName::Bellman, m: None, degree: None, bandwidth: None, lambda: None, gamma: None, grid_size: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentName {
    #[default]
    Marginal,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Defaults to `model.json` in the output directory.
    pub model: Option<PathBuf>,
    pub component: ComponentName,
    /// Feature of a joint component.
    pub feature: Option<usize>,
    /// Action blocks to export; all when absent.
    pub actions: Option<Vec<usize>>,
    /// Evaluation points along the feature of a joint component.
    pub points: usize,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { model: None, component: ComponentName::Marginal, feature: None, actions: None, points: 50 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.data.source, &self.data.path) {
            (DataSource::Csv, None) => return bad("data.source = \"csv\" needs data.path".into()),
            (DataSource::Sim, Some(_)) => return bad("data.path is only read when data.source = \"csv\"".into()),
            _ => {}
        }
        if self.mode == Mode::Continuous {
            if self.data.actions.is_some() {
                return bad("continuous mode has no discrete action count (data.actions)".into());
            }
            if self.data.source == DataSource::Sim {
                return bad("the simulator has binary actions; use mode = \"discrete\"".into());
            }
        }
        if self.mode == Mode::Discrete && self.data.candidate == "action" {
            return bad("the action can only be the candidate in continuous mode".into());
        }
        if let Some(j) = self.feature_candidate() {
            if self.data.source == DataSource::Sim && j >= self.data.sim.d {
                return bad(format!("candidate s_{j} is outside the simulator's {} features", self.data.sim.d));
            }
        }
        if self.data.source == DataSource::Sim {
            if self.feature_candidate().is_none() {
                return bad("with simulated data the candidate must be a state feature `s_<j>`".into());
            }
            self.sim_config()?.validate()?;
            if self.data.sim.n == 0 || self.data.sim.ell == 0 {
                return bad("data.sim.n and data.sim.ell must be positive".into());
            }
        }
        self.basis_spec()?;
        self.kernel_spec()?;
        self.solver_config()?.validate()?;
        self.policy_config().validate()?;
        self.grid_points()?;
        if !(0.0..1.0).contains(&self.solver.gamma) {
            return bad(format!("solver.gamma must lie in [0, 1), got {}", self.solver.gamma));
        }
        if self.cv.folds < 2 {
            return bad("cv.folds must be at least 2".into());
        }
        if self.regret.episodes == 0 || self.regret.ell == 0 {
            return bad("regret.episodes and regret.ell must be positive".into());
        }
        if self.export.points == 0 {
            return bad("export.points must be positive".into());
        }
        Ok(())
    }

    fn feature_candidate(&self) -> Option<usize> {
        self.data.candidate.strip_prefix("s_").and_then(|j| j.parse().ok())
    }

    pub fn candidate_source(&self) -> CandidateSource {
        match (self.feature_candidate(), self.data.candidate.as_str()) {
            (Some(j), _) => CandidateSource::Feature(j),
            (None, "action") => CandidateSource::Action,
            (None, column) => CandidateSource::Column(column.to_string()),
        }
    }

    pub fn candidate_choice(&self) -> CandidateChoice {
        match self.candidate_source() {
            CandidateSource::Feature(j) => CandidateChoice::Feature(j),
            CandidateSource::Action => CandidateChoice::Action,
            CandidateSource::Column(_) => CandidateChoice::Column,
        }
    }

    pub fn schema(&self, d: usize) -> TrajectorySchema {
        let kind = match self.mode {
            Mode::Discrete => ActionKind::Discrete { k: self.data.actions },
            Mode::Continuous => ActionKind::Continuous,
        };
        TrajectorySchema::standard(d, self.candidate_source(), kind)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.data.sim;
        let config = SimConfig { d: s.d, sigma: s.sigma, correlation: s.correlation, seed: self.seed };
        config.validate()?;
        Ok(config)
    }

    pub fn basis_spec(&self) -> Result<BasisSpec> {
        match self.basis.family {
            BasisFamily::Bspline => BasisSpec::bspline(self.basis.m, self.basis.degree),
            BasisFamily::Trigonometric => BasisSpec::trigonometric(self.basis.m),
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel.family, self.kernel.bandwidth)
    }

    pub fn grid_points(&self) -> Result<Vec<f64>> {
        match &self.grid.points {
            Some(points) => {
                if points.is_empty() || points.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Config("grid.points must be non-empty and strictly increasing".into()));
                }
                Ok(points.clone())
            }
            None if self.grid.size == 0 => Err(Error::Config("grid.size must be positive".into())),
            None => Ok(even_grid(self.grid.size)),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let config = SolverConfig {
            lambda: s.lambda,
            mu: s.mu,
            relaxation: s.relaxation,
            epsilon: s.epsilon,
            max_iter: s.max_iter,
            seed: self.seed,
            ridge: s.ridge,
            threshold: s.threshold,
            divergence_bound: s.divergence_bound,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn method(&self) -> FitMethod {
        self.solver.method.into()
    }

    pub fn policy_config(&self) -> PolicyIterationConfig {
        PolicyIterationConfig {
            max_policy_iters: self.policy.max_iters,
            frob_epsilon: self.policy.frob_epsilon,
            method: self.method(),
        }
    }

    /// The single-run hyperparameters.
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            family: self.basis.family,
            m: self.basis.m,
            degree: self.basis.degree,
            kernel: self.kernel.family,
            bandwidth: self.kernel.bandwidth,
            lambda: self.solver.lambda,
            mu: self.solver.mu,
            gamma: self.solver.gamma,
            grid_size: self.grid.points.as_ref().map_or(self.grid.size, Vec::len),
            ridge: self.solver.ridge,
        }
    }

    pub fn hyper_grid(&self) -> HyperGrid {
        let mut grid = HyperGrid::single(&self.hyper_params());
        let cv = &self.cv;
        if let Some(v) = &cv.m {
            grid.m = v.clone();
        }
        if let Some(v) = &cv.degree {
            grid.degree = v.clone();
        }
        if let Some(v) = &cv.bandwidth {
            grid.bandwidth = v.clone();
        }
        if let Some(v) = &cv.lambda {
            grid.lambda = v.clone();
        }
        if let Some(v) = &cv.gamma {
            grid.gamma = v.clone();
        }
        if let Some(v) = &cv.grid_size {
            grid.grid_size = v.clone();
        }
        grid
    }

    pub fn loss(&self) -> Loss {
        match self.cv.loss {
            LossName::Bellman => Loss::Bellman,
            LossName::ValidationMse => Loss::ValidationMse,
        }
    }
}
