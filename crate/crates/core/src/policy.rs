//! Greedy policies read off a grid of local models, and approximate policy
//! iteration that alternates evaluation with greedy improvement.

use serde::{Deserialize, Serialize};

use crate::basis::{build_design, FeatureMap, NextAction};
use crate::data::{Action, ActionSpace, BatchDataset, CandidateChoice, NormalizationSpec};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::solver::{fit_grid_on_design, FitMethod, LocalModelGrid, SolverConfig};

/// A deterministic decision rule.
///
/// `candidate` is the value of the candidate variable at `state`; rules that
/// do not index on it may ignore it.
pub trait Policy: Sync {
    fn action(&self, state: &[f64], candidate: f64) -> Result<Action>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn action(&self, state: &[f64], candidate: f64) -> Result<Action> {
        (**self).action(state, candidate)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `phi(s, a)' B_i` at the grid value nearest to `x`.
pub fn q_value(grid: &LocalModelGrid, s: &[f64], a: Action, x: f64) -> Result<f64> {
    let row = grid.row(grid.nearest(x));
    let phi = grid.features.feature_vector(s)?;
    let len = phi.len();
    let block = match (grid.layout().actions, a) {
        (ActionSpace::Discrete { k }, Action::Discrete(i)) if i < k => i,
        (ActionSpace::Discrete { k }, Action::Discrete(i)) => return Err(Error::OutOfRange { index: i, len: k }),
        (ActionSpace::Discrete { .. }, Action::Continuous(_)) => {
            return Err(Error::InvalidArgument("continuous action in discrete mode".into()))
        }
        (ActionSpace::Continuous, _) => 0,
    };
    Ok(dot(&phi, &row[block * len..(block + 1) * len]))
}

/// Pick the nearest local model by `candidate`, then the action block with the
/// largest value. Ties go to the lowest index.
pub fn greedy_action_discrete(grid: &LocalModelGrid, s: &[f64], candidate: f64) -> Result<usize> {
    let ActionSpace::Discrete { k } = grid.layout().actions else {
        return Err(Error::InvalidArgument("grid was fitted with a continuous action".into()));
    };
    let row = grid.row(grid.nearest(candidate));
    let phi = grid.features.feature_vector(s)?;
    let len = phi.len();
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for a in 0..k {
        let value = dot(&phi, &row[a * len..(a + 1) * len]);
        if value > best_value {
            best = a;
            best_value = value;
        }
    }
    Ok(best)
}

/// The grid value whose local model scores `s` highest. Ties go to the lowest index.
pub fn greedy_action_continuous(grid: &LocalModelGrid, s: &[f64]) -> Result<f64> {
    if grid.layout().actions != ActionSpace::Continuous {
        return Err(Error::InvalidArgument("grid was fitted with discrete actions".into()));
    }
    let phi = grid.features.feature_vector(s)?;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, m) in grid.models.iter().enumerate() {
        let value = dot(&phi, &m.beta);
        if value > best_value {
            best = i;
            best_value = value;
        }
    }
    Ok(grid.models[best].z)
}

/// Greedy policy with respect to a fitted grid.
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'a> {
    pub grid: &'a LocalModelGrid,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(grid: &'a LocalModelGrid) -> Self {
        Self { grid }
    }
}

impl Policy for GreedyPolicy<'_> {
    fn action(&self, state: &[f64], candidate: f64) -> Result<Action> {
        match self.grid.layout().actions {
            ActionSpace::Discrete { .. } => greedy_action_discrete(self.grid, state, candidate).map(Action::Discrete),
            ActionSpace::Continuous => greedy_action_continuous(self.grid, state).map(Action::Continuous),
        }
    }
}

/// Greedy policy that owns its grid.
#[derive(Debug, Clone)]
pub struct OwnedGreedyPolicy(pub LocalModelGrid);

impl Policy for OwnedGreedyPolicy {
    fn action(&self, state: &[f64], candidate: f64) -> Result<Action> {
        GreedyPolicy::new(&self.0).action(state, candidate)
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn action(&self, _: &[f64], _: f64) -> Result<Action> {
        Ok(self.0)
    }
}

/// Wraps a policy fitted on normalized data so it acts on raw states.
///
/// For a feature candidate the candidate value is read from the state and
/// the argument is ignored.
#[derive(Debug, Clone)]
pub struct NormalizedPolicy<P> {
    pub inner: P,
    pub spec: NormalizationSpec,
    pub candidate: CandidateChoice,
}

impl<P: Policy> Policy for NormalizedPolicy<P> {
    fn action(&self, state: &[f64], candidate: f64) -> Result<Action> {
        if state.len() != self.spec.min.len() {
            return Err(Error::Dimension(format!("state has {} features, expected {}", state.len(), self.spec.min.len())));
        }
        let s = self.spec.normalize_state(state);
        let x = match self.candidate {
            CandidateChoice::Feature(j) => s[j],
            CandidateChoice::Column => self.spec.normalize_candidate(candidate),
            CandidateChoice::Action => self.spec.normalize_action(candidate),
        };
        Ok(match self.inner.action(&s, x)? {
            Action::Continuous(u) => Action::Continuous(self.spec.denormalize_action(u)),
            a => a,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyIterationConfig {
    pub max_policy_iters: usize,
    /// Stop once consecutive coefficient matrices differ by less than this (Frobenius).
    pub frob_epsilon: f64,
    pub method: FitMethod,
}

impl Default for PolicyIterationConfig {
    fn default() -> Self {
        Self { max_policy_iters: 3, frob_epsilon: 1e-3, method: FitMethod::CoordinateDescent }
    }
}

impl PolicyIterationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_policy_iters == 0 {
            return Err(Error::InvalidArgument("max_policy_iters must be at least 1".into()));
        }
        if !(self.frob_epsilon > 0.0) {
            return Err(Error::InvalidArgument("frob_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Policy whose value the first iteration evaluates.
#[derive(Clone, Copy)]
pub enum InitialPolicy<'a> {
    /// The data-generating policy, through the observed next actions.
    Behavioral,
    Given(&'a dyn Policy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyIterationStop {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Frobenius distance to the previous coefficient matrix (zero matrix before the first).
    pub frobenius_delta: f64,
    pub total_passes: usize,
    pub all_converged: bool,
    pub design_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyIterationDiagnostics {
    pub iterations: Vec<IterationRecord>,
    pub stop: PolicyIterationStop,
}

/// Approximate policy iteration over a grid of local models.
#[allow(clippy::too_many_arguments)]
pub fn ksh_lspi(
    data: &BatchDataset,
    features: &FeatureMap,
    kernel: &KernelSpec,
    zs: &[f64],
    gamma: f64,
    solver: &SolverConfig,
    config: &PolicyIterationConfig,
    initial: InitialPolicy<'_>,
) -> Result<(LocalModelGrid, PolicyIterationDiagnostics)> {
    config.validate()?;
    solver.validate()?;
    let p = features.layout.p();
    let mut previous: Vec<Vec<f64>> = vec![vec![0.0; p]; zs.len()];
    let mut current: Option<LocalModelGrid> = None;
    let mut records = Vec::new();
    let mut stop = PolicyIterationStop::MaxIterations;
    for iteration in 1..=config.max_policy_iters {
        let step = || -> Result<LocalModelGrid> {
            let design = match (&current, initial) {
                (Some(grid), _) => build_design(features, data, NextAction::Policy(&GreedyPolicy::new(grid)))?,
                (None, InitialPolicy::Behavioral) => build_design(features, data, NextAction::Observed)?,
                (None, InitialPolicy::Given(policy)) => build_design(features, data, NextAction::Policy(policy))?,
            };
            let init = current.as_ref().map(|_| previous.as_slice());
            fit_grid_on_design(&design, features, kernel, zs, gamma, solver, config.method, init)
        };
        let grid = step().map_err(|e| e.at_iteration(iteration))?;
        let delta = grid.frobenius_distance(&previous);
        records.push(IterationRecord {
            iteration,
            frobenius_delta: delta,
            total_passes: grid.models.iter().map(|m| m.diagnostics.passes).sum(),
            all_converged: grid.models.iter().all(|m| m.diagnostics.converged),
            design_rows: data.len(),
        });
        log::info!("policy iteration {iteration}: |B - B_prev|_F = {delta:e}");
        previous = grid.coefficients();
        current = Some(grid);
        if delta < config.frob_epsilon {
            stop = PolicyIterationStop::Converged;
            break;
        }
    }
    let grid = current.expect("at least one iteration runs");
    Ok((grid, PolicyIterationDiagnostics { iterations: records, stop }))
}
