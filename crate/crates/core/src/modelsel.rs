//! Out-of-sample losses, trajectory-level cross-validation and exhaustive
//! hyperparameter search.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, BasisSpec, FeatureMap, NextAction};
use crate::data::{shuffled_ids, split_patient_level, Action, BatchDataset, NormalizationSpec};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::policy::q_value;
use crate::solver::{even_grid, fit_local_grid, FitMethod, LocalModelGrid, SolverConfig};

/// Mean squared empirical Bellman residual
/// `(Q(s, a) - r - gamma Q(s', a'))^2`, with both values taken from the local
/// model nearest to the transition's candidate value.
///
/// Observed next actions are used unless a policy is given; transitions
/// without an observed next action are skipped. With `gamma = 0` every
/// transition counts.
pub fn bellman_loss(grid: &LocalModelGrid, data: &BatchDataset, gamma: f64, next: NextAction<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("no transitions to score".into()));
    }
    let observed = data.observed_next_actions();
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, t) in data.transitions().iter().enumerate() {
        let future = if gamma == 0.0 {
            0.0
        } else {
            let a_next: Action = match next {
                NextAction::Observed => match observed[i] {
                    Some(a) => a,
                    None => continue,
                },
                NextAction::Policy(p) => p.action(&t.next_state, crate::basis::next_candidate(data, i))?,
            };
            q_value(grid, &t.next_state, a_next, t.candidate)?
        };
        let q = q_value(grid, &t.state, t.action, t.candidate)?;
        let residual = q - t.reward - gamma * future;
        total += residual * residual;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("no transition has an observed next action".into()));
    }
    Ok(total / count as f64)
}

/// Mean squared error of `Q(s, a)` against the immediate reward.
pub fn validation_mse(grid: &LocalModelGrid, data: &BatchDataset) -> Result<f64> {
    bellman_loss(grid, data, 0.0, NextAction::Observed)
}

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub family: BasisFamily,
    pub m: usize,
    pub degree: usize,
    pub kernel: KernelFamily,
    pub bandwidth: f64,
    pub lambda: f64,
    /// `None` picks the step size automatically.
    pub mu: Option<f64>,
    pub gamma: f64,
    pub grid_size: usize,
    pub ridge: f64,
}

impl HyperParams {
    pub fn basis(&self) -> Result<BasisSpec> {
        match self.family {
            BasisFamily::Bspline => BasisSpec::bspline(self.m, self.degree),
            BasisFamily::Trigonometric => BasisSpec::trigonometric(self.m),
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, self.bandwidth)
    }
}

/// Candidate values for each hyperparameter; the search covers their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub family: Vec<BasisFamily>,
    pub m: Vec<usize>,
    pub degree: Vec<usize>,
    pub kernel: Vec<KernelFamily>,
    pub bandwidth: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<Option<f64>>,
    pub gamma: Vec<f64>,
    pub grid_size: Vec<usize>,
    pub ridge: Vec<f64>,
}

impl HyperGrid {
    /// A grid with exactly one combination.
    pub fn single(h: &HyperParams) -> Self {
        Self {
            family: vec![h.family],
            m: vec![h.m],
            degree: vec![h.degree],
            kernel: vec![h.kernel],
            bandwidth: vec![h.bandwidth],
            lambda: vec![h.lambda],
            mu: vec![h.mu],
            gamma: vec![h.gamma],
            grid_size: vec![h.grid_size],
            ridge: vec![h.ridge],
        }
    }

    /// All combinations; the last field varies fastest.
    pub fn combinations(&self) -> Result<Vec<HyperParams>> {
        let sizes = [
            self.family.len(),
            self.m.len(),
            self.degree.len(),
            self.kernel.len(),
            self.bandwidth.len(),
            self.lambda.len(),
            self.mu.len(),
            self.gamma.len(),
            self.grid_size.len(),
            self.ridge.len(),
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("every hyperparameter needs at least one value".into()));
        }
        let total: usize = sizes.iter().product();
        let mut out = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut pick = [0usize; 10];
            for (slot, &n) in pick.iter_mut().zip(&sizes).rev() {
                *slot = idx % n;
                idx /= n;
            }
            out.push(HyperParams {
                family: self.family[pick[0]],
                m: self.m[pick[1]],
                degree: self.degree[pick[2]],
                kernel: self.kernel[pick[3]],
                bandwidth: self.bandwidth[pick[4]],
                lambda: self.lambda[pick[5]],
                mu: self.mu[pick[6]],
                gamma: self.gamma[pick[7]],
                grid_size: self.grid_size[pick[8]],
                ridge: self.ridge[pick[9]],
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    Bellman,
    ValidationMse,
}

/// Settings shared by every fit during model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub method: FitMethod,
    /// Template for the solver; penalty, step, ridge and seed are overridden.
    pub solver: SolverConfig,
    pub loss: Loss,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { method: FitMethod::CoordinateDescent, solver: SolverConfig::default(), loss: Loss::Bellman }
    }
}

/// Normalize on `train`, fit one grid under the behavior policy, and return
/// the grid together with the normalization.
pub fn fit_combination(
    train: &BatchDataset,
    h: &HyperParams,
    settings: &FitSettings,
    seed: u64,
) -> Result<(LocalModelGrid, NormalizationSpec)> {
    let norm = NormalizationSpec::fit(train)?;
    let train = norm.apply(train)?;
    let features = FeatureMap::fit(h.basis()?, &train)?;
    let solver = SolverConfig { lambda: h.lambda, mu: h.mu, ridge: h.ridge, seed, ..settings.solver.clone() };
    let grid = fit_local_grid(
        &train,
        &features,
        &h.kernel_spec()?,
        &even_grid(h.grid_size),
        h.gamma,
        &solver,
        settings.method,
        NextAction::Observed,
    )?;
    Ok((grid, norm))
}

fn score(grid: &LocalModelGrid, norm: &NormalizationSpec, valid: &BatchDataset, h: &HyperParams, loss: Loss) -> Result<f64> {
    let valid = norm.apply(valid)?;
    match loss {
        Loss::Bellman => bellman_loss(grid, &valid, h.gamma, NextAction::Observed),
        Loss::ValidationMse => validation_mse(grid, &valid),
    }
}

/// Trajectory ids of each fold. Assignment depends only on the id set and `seed`.
pub fn fold_assignment(data: &BatchDataset, k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let ids = shuffled_ids(data, seed);
    if ids.len() < k {
        return Err(Error::InvalidArgument(format!("{} trajectories cannot fill {k} folds", ids.len())));
    }
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}

/// Held-out loss of each fold, fitting on the remaining folds.
pub fn k_fold_cv(data: &BatchDataset, k: usize, h: &HyperParams, settings: &FitSettings, seed: u64) -> Result<Vec<f64>> {
    let folds = fold_assignment(data, k, seed)?;
    folds
        .par_iter()
        .enumerate()
        .map(|(f, fold)| {
            let held: HashSet<String> = fold.iter().cloned().collect();
            let rest: HashSet<String> = data.trajectory_ids().into_iter().filter(|id| !held.contains(id)).collect();
            let (grid, norm) = fit_combination(&data.subset(&rest), h, settings, seed ^ f as u64)?;
            score(&grid, &norm, &data.subset(&held), h, settings.loss)
        })
        .collect()
}

/// Validation loss on a trajectory-level train/validation split.
pub fn holdout_loss(
    data: &BatchDataset,
    train_fraction: f64,
    h: &HyperParams,
    settings: &FitSettings,
    seed: u64,
) -> Result<f64> {
    let (train, valid) = split_patient_level(data, train_fraction, seed)?;
    let (grid, norm) = fit_combination(&train, h, settings, seed)?;
    score(&grid, &norm, &valid, h, settings.loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub combinations: Vec<HyperParams>,
    /// `fold_losses[c][f]`; infinite when the combination failed.
    pub fold_losses: Vec<Vec<f64>>,
    pub mean_loss: Vec<f64>,
    pub errors: Vec<Option<String>>,
    /// First combination with the smallest finite mean loss.
    pub best: Option<usize>,
    pub k: usize,
}

impl CVResult {
    pub fn best_params(&self) -> Option<&HyperParams> {
        self.best.map(|i| &self.combinations[i])
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header: Vec<String> =
            ["family", "m", "degree", "kernel", "bandwidth", "lambda", "mu", "gamma", "grid_size", "ridge"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        header.extend((0..self.k).map(|f| format!("fold_{f}")));
        header.extend(["mean_loss".to_string(), "error".to_string()]);
        w.write_record(&header)?;
        for (c, h) in self.combinations.iter().enumerate() {
            let mut row = vec![
                format!("{:?}", h.family).to_lowercase(),
                h.m.to_string(),
                h.degree.to_string(),
                format!("{:?}", h.kernel).to_lowercase(),
                h.bandwidth.to_string(),
                h.lambda.to_string(),
                h.mu.map_or("auto".to_string(), |v| v.to_string()),
                h.gamma.to_string(),
                h.grid_size.to_string(),
                h.ridge.to_string(),
            ];
            row.extend(self.fold_losses[c].iter().map(|v| v.to_string()));
            row.push(self.mean_loss[c].to_string());
            row.push(self.errors[c].clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Io { path: "csv output".into(), source: e })?;
        Ok(())
    }
}

/// Cross-validate every combination. Failed fits are recorded with an
/// infinite loss instead of aborting the search.
pub fn grid_search(data: &BatchDataset, grid: &HyperGrid, k: usize, settings: &FitSettings, seed: u64) -> Result<CVResult> {
    fold_assignment(data, k, seed)?;
    let combinations = grid.combinations()?;
    let outcomes: Vec<std::result::Result<Vec<f64>, String>> = combinations
        .par_iter()
        .map(|h| k_fold_cv(data, k, h, settings, seed).map_err(|e| e.to_string()))
        .collect();
    let mut fold_losses = Vec::with_capacity(outcomes.len());
    let mut mean_loss = Vec::with_capacity(outcomes.len());
    let mut errors = Vec::with_capacity(outcomes.len());
    for (h, outcome) in combinations.iter().zip(outcomes) {
        match outcome {
            Ok(losses) => {
                mean_loss.push(losses.iter().sum::<f64>() / k as f64);
                fold_losses.push(losses);
                errors.push(None);
            }
            Err(msg) => {
                log::warn!("combination {h:?} failed: {msg}");
                mean_loss.push(f64::INFINITY);
                fold_losses.push(vec![f64::INFINITY; k]);
                errors.push(Some(msg));
            }
        }
    }
    let mut best: Option<usize> = None;
    for (i, &v) in mean_loss.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| v < mean_loss[b]) {
            best = Some(i);
        }
    }
    Ok(CVResult { combinations, fold_losses, mean_loss, errors, best, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::CenteringStats;
    use crate::data::{ActionSpace, CandidateChoice, Transition};
    use crate::sim::{sample_trajectories, SimConfig};

    fn tiny_map() -> FeatureMap {
        let basis = BasisSpec::bspline(3, 1).unwrap();
        FeatureMap::new(basis, CenteringStats { means: vec![vec![0.0; 3]; 2] }, Some(0), ActionSpace::Discrete { k: 2 })
            .unwrap()
    }

    fn tiny_data(rewards: [f64; 2]) -> BatchDataset {
        let t = |time: u64, r: f64, a: usize| Transition {
            state: vec![0.2, 0.0],
            action: Action::Discrete(a),
            reward: r,
            next_state: vec![0.2, 0.0],
            candidate: 0.2,
            trajectory_id: "a".into(),
            time_index: time,
        };
        BatchDataset::new(vec![t(0, rewards[0], 1), t(1, rewards[1], 0)], 2, ActionSpace::Discrete { k: 2 }, CandidateChoice::Feature(0))
            .unwrap()
    }

    fn intercepts(c0: f64, c1: f64) -> LocalModelGrid {
        let map = tiny_map();
        let p = map.layout.p();
        let len = map.layout.block_len();
        let mut row = vec![0.0; p];
        row[0] = c0;
        row[len] = c1;
        LocalModelGrid::from_rows(&[0.5], vec![row], map, KernelSpec::gaussian(0.1).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn losses_by_hand() {
        let data = tiny_data([3.0, -1.0]);
        // basis value at s = 0 is (1, 0, 0), so Q(s, a) = intercept + beta_0
        let zero = intercepts(0.0, 0.0);
        assert_eq!(validation_mse(&zero, &data).unwrap(), 5.0);
        let exact = intercepts(-1.0, 3.0);
        assert_eq!(validation_mse(&exact, &data).unwrap(), 0.0);
        assert_eq!(bellman_loss(&exact, &data, 0.0, NextAction::Observed).unwrap(), 0.0);
        // only the first transition has an observed next action (a' = 0):
        // Q(s, 1) - r - gamma Q(s', 0) = 3 - 3 - 0.5 * (-1) = 0.5
        let loss = bellman_loss(&exact, &data, 0.5, NextAction::Observed).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);
    }

    fn sim_data(n: usize) -> BatchDataset {
        let batch = sample_trajectories(&SimConfig { d: 3, seed: 2, ..Default::default() }, n, 6).unwrap();
        batch.to_dataset(CandidateChoice::Feature(0)).unwrap()
    }

    fn params() -> HyperParams {
        HyperParams {
            family: BasisFamily::Bspline,
            m: 4,
            degree: 2,
            kernel: KernelFamily::Gaussian,
            bandwidth: 0.3,
            lambda: 0.0,
            mu: None,
            gamma: 0.0,
            grid_size: 3,
            ridge: 1e-8,
        }
    }

    #[test]
    fn folds_partition_trajectories() {
        let data = sim_data(10);
        let folds = fold_assignment(&data, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let all: HashSet<&String> = folds.iter().flatten().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(fold_assignment(&data, 5, 1).unwrap(), folds);
        assert!(fold_assignment(&data, 11, 1).is_err());
    }

    #[test]
    fn single_combination_search() {
        let data = sim_data(12);
        let settings = FitSettings { method: FitMethod::Analytic, ..Default::default() };
        let h = params();
        let res = grid_search(&data, &HyperGrid::single(&h), 3, &settings, 5).unwrap();
        assert_eq!(res.best, Some(0));
        assert_eq!(res.fold_losses[0], k_fold_cv(&data, 3, &h, &settings, 5).unwrap());
    }

    #[test]
    fn failures_are_recorded_and_duplicates_agree() {
        let data = sim_data(12);
        let settings = FitSettings { method: FitMethod::Analytic, ..Default::default() };
        let mut grid = HyperGrid::single(&params());
        // m = 0 is not a valid basis
        grid.m = vec![0, 4, 4];
        let res = grid_search(&data, &grid, 3, &settings, 5).unwrap();
        assert!(res.mean_loss[0].is_infinite() && res.errors[0].is_some());
        assert_eq!(res.mean_loss[1], res.mean_loss[2]);
        assert_eq!(res.best, Some(1));
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn product_order() {
        let mut grid = HyperGrid::single(&params());
        grid.lambda = vec![0.1, 0.2];
        grid.bandwidth = vec![0.05, 0.5];
        let combos = grid.combinations().unwrap();
        let pairs: Vec<(f64, f64)> = combos.iter().map(|h| (h.bandwidth, h.lambda)).collect();
        assert_eq!(pairs, vec![(0.05, 0.1), (0.05, 0.2), (0.5, 0.1), (0.5, 0.2)]);
        grid.ridge.clear();
        assert!(grid.combinations().is_err());
    }
}
