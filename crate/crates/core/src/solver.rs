//! Kernel-weighted least-squares fixed-point estimation of local models.
//!
//! At a grid value `z` the fixed point solves `A beta = b` with
//! `A = Phi' W (Phi - gamma Phi_next)` and `b = Phi' W r`, where `W` holds the
//! kernel weights. The system is solved either directly or by randomized
//! block coordinate descent with a group-Lasso penalty, one group per
//! (action block, feature) pair plus one intercept group per block.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{build_design, DesignMatrices, FeatureLayout, FeatureMap, Group, GroupKind, NextAction};
use crate::data::BatchDataset;
use crate::error::{Error, Result};
use crate::kernel::{weight_vector, KernelSpec};

/// The linear system `A beta = b` at one grid value.
#[derive(Debug, Clone)]
pub struct FixedPointSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub gamma: f64,
    pub z: Option<f64>,
    /// Coefficient ranges along whose all-ones direction `A` is null (both
    /// sides); solutions are kept with zero mean over each range.
    pub null_groups: Vec<Range<usize>>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("discount factor {gamma} not in [0, 1)")))
    }
}

fn check_rows(design: &DesignMatrices, weights: &[f64], rewards: &[f64]) -> Result<()> {
    let n = design.phi.nrows();
    if design.phi_next.shape() != design.phi.shape() || weights.len() != n || rewards.len() != n {
        return Err(Error::Dimension(format!(
            "design {}x{}, next design {}x{}, {} weights, {} rewards",
            n,
            design.phi.ncols(),
            design.phi_next.nrows(),
            design.phi_next.ncols(),
            weights.len(),
            rewards.len()
        )));
    }
    Ok(())
}

/// `Phi` with each row scaled by its weight.
fn weighted_rows(phi: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut out = phi.clone();
    for (r, &w) in weights.iter().enumerate() {
        out.row_mut(r).scale_mut(w);
    }
    out
}

pub fn assemble_system(
    design: &DesignMatrices,
    weights: &[f64],
    rewards: &[f64],
    gamma: f64,
) -> Result<FixedPointSystem> {
    check_gamma(gamma)?;
    check_rows(design, weights, rewards)?;
    let phi_w = weighted_rows(&design.phi, weights);
    let target = &design.phi - &design.phi_next * gamma;
    let a = phi_w.tr_mul(&target);
    let b = phi_w.tr_mul(&DVector::from_column_slice(rewards));
    Ok(FixedPointSystem { a, b, gamma, z: None, null_groups: design.null_groups.clone() })
}

fn remove_null_components(beta: &mut [f64], null_groups: &[Range<usize>]) {
    for r in null_groups {
        let mean = beta[r.clone()].iter().sum::<f64>() / r.len() as f64;
        beta[r.clone()].iter_mut().for_each(|v| *v -= mean);
    }
}

/// Solve `(A + ridge I) beta = b` by LU factorization.
pub fn solve_analytic(sys: &FixedPointSystem, ridge: f64) -> Result<Vec<f64>> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {ridge}")));
    }
    let p = sys.a.nrows();
    if sys.a.ncols() != p || sys.b.len() != p {
        return Err(Error::Dimension(format!("A is {}x{}, b has {}", p, sys.a.ncols(), sys.b.len())));
    }
    let mut m = sys.a.clone();
    for i in 0..p {
        m[(i, i)] += ridge;
    }
    let scale = m.amax();
    let lu = m.lu();
    let pivot = lu.u().diagonal().amin();
    let tiny = if ridge > 0.0 { 0.0 } else { 1e-12 * scale };
    if scale == 0.0 || !(pivot > tiny) {
        let advice = if ridge > 0.0 { "" } else { "; use ridge > 0" };
        return Err(Error::Singular(format!("smallest pivot {pivot:e} against scale {scale:e}{advice}")));
    }
    let beta = lu
        .solve(&sys.b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("LU solve produced non-finite coefficients".into()))?;
    let mut beta: Vec<f64> = beta.iter().copied().collect();
    remove_null_components(&mut beta, &sys.null_groups);
    Ok(beta)
}

/// Group soft-thresholding `(v / |v|) max(0, |v| - t)`.
pub fn soft_threshold(v: &[f64], t: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= t {
        return vec![0.0; v.len()];
    }
    let shrink = (norm - t) / norm;
    v.iter().map(|x| x * shrink).collect()
}

/// `Phi_g' W ((Phi - gamma Phi_next) beta - r)` for one group, evaluated from the design.
pub fn group_gradient(
    design: &DesignMatrices,
    weights: &[f64],
    rewards: &[f64],
    gamma: f64,
    beta: &[f64],
    block: usize,
    kind: GroupKind,
) -> Result<Vec<f64>> {
    check_rows(design, weights, rewards)?;
    if beta.len() != design.p() {
        return Err(Error::Dimension(format!("beta has {} entries, design has {}", beta.len(), design.p())));
    }
    let group = design.layout.group(block, kind)?;
    let beta = DVector::from_column_slice(beta);
    let residual = &design.phi * &beta - &design.phi_next * &beta * gamma - DVector::from_column_slice(rewards);
    Ok(group
        .range
        .map(|c| {
            design
                .phi
                .column(c)
                .iter()
                .zip(weights)
                .zip(residual.iter())
                .map(|((x, w), e)| x * w * e)
                .sum()
        })
        .collect())
}

/// How the group threshold is derived from the penalty and step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdConvention {
    /// `tau = mu * lambda_g`, the proximal-gradient scaling.
    #[default]
    Standard,
    /// `tau = lambda_g / mu`.
    InverseStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Group penalty; intercept groups use `lambda * sqrt(m)`.
    pub lambda: f64,
    /// Step size; `None` uses `relaxation / |A_gg|_2` for each group `g`.
    pub mu: Option<f64>,
    /// Factor on the automatic per-group step, in `(0, 2)`.
    pub relaxation: f64,
    /// Stop when a full pass changes the coefficients by less than this (Euclidean).
    pub epsilon: f64,
    /// Maximum number of passes.
    pub max_iter: usize,
    pub seed: u64,
    /// Diagonal regularizer for the direct solve.
    pub ridge: f64,
    pub threshold: ThresholdConvention,
    /// Coefficient magnitude treated as divergence.
    pub divergence_bound: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            mu: None,
            relaxation: 1.5,
            epsilon: 1e-6,
            max_iter: 100_000,
            seed: 0,
            ridge: 1e-8,
            threshold: ThresholdConvention::Standard,
            divergence_bound: 1e12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad("mu must be positive");
            }
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return bad("relaxation must lie in (0, 2)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be non-negative");
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound must be positive");
        }
        Ok(())
    }

    /// Threshold applied to a group with penalty weight `lambda_g`.
    pub fn threshold_for(&self, lambda_g: f64, mu: f64) -> f64 {
        match self.threshold {
            ThresholdConvention::Standard => mu * lambda_g,
            ThresholdConvention::InverseStep => lambda_g / mu,
        }
    }
}

/// Per-group penalty weight: `sqrt(m)` for intercepts, 1 for feature groups.
pub fn penalty_weight(layout: &FeatureLayout, kind: GroupKind) -> f64 {
    match kind {
        GroupKind::Intercept => (layout.m as f64).sqrt(),
        GroupKind::Feature(_) => 1.0,
    }
}

/// Smallest `lambda` for which every group is zero at `beta = 0`.
pub fn lambda_max(sys: &FixedPointSystem, layout: &FeatureLayout) -> f64 {
    layout
        .groups()
        .iter()
        .map(|g| {
            let norm = sys.b.rows(g.range.start, g.range.len()).norm();
            norm / penalty_weight(layout, g.kind)
        })
        .fold(0.0, f64::max)
}

fn diagonal_block_norm(sys: &FixedPointSystem, g: &Group) -> f64 {
    let block = sys.a.view((g.range.start, g.range.start), (g.range.len(), g.range.len()));
    block.into_owned().singular_values().max()
}

/// `1 / |A_gg|_2`, the step used for group `g` when none is configured.
pub fn group_step_size(sys: &FixedPointSystem, g: &Group) -> f64 {
    let norm = diagonal_block_norm(sys, g);
    if norm > 0.0 {
        1.0 / norm
    } else {
        1.0
    }
}

/// `1 / max_g |A_gg|_2`, a single step no larger than any group's own.
pub fn stable_step_size(sys: &FixedPointSystem, layout: &FeatureLayout) -> f64 {
    let worst = layout.groups().iter().map(|g| diagonal_block_norm(sys, g)).fold(0.0, f64::max);
    if worst > 0.0 {
        1.0 / worst
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    Analytic,
    CoordinateDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Direct solve; no iterations.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub method: FitMethod,
    pub passes: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub final_change: f64,
    pub step: f64,
    pub ess: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub z: f64,
    pub beta: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

/// Randomized block coordinate descent with group soft-thresholding.
///
/// Each pass visits the intercept slot and every feature slot once in a
/// seeded random order; visiting a slot updates that group in every action
/// block.
pub fn coordinate_descent(
    sys: &FixedPointSystem,
    layout: &FeatureLayout,
    config: &SolverConfig,
    init: Option<&[f64]>,
) -> Result<(Vec<f64>, FitDiagnostics)> {
    config.validate()?;
    let p = layout.p();
    if sys.a.nrows() != p || sys.b.len() != p {
        return Err(Error::Dimension(format!("system has {} rows, layout expects {p}", sys.a.nrows())));
    }
    let mut beta = match init {
        Some(b) if b.len() == p => b.to_vec(),
        Some(b) => return Err(Error::Dimension(format!("initial beta has {} entries, expected {p}", b.len()))),
        None => vec![0.0; p],
    };
    remove_null_components(&mut beta, &sys.null_groups);
    let groups = layout.groups();
    let mut slots: Vec<GroupKind> = vec![GroupKind::Intercept];
    slots.extend(layout.features().map(GroupKind::Feature));
    let by_slot: Vec<Vec<(&Group, f64, f64, bool)>> = slots
        .iter()
        .map(|&kind| {
            groups
                .iter()
                .filter(|g| g.kind == kind)
                .map(|g| {
                    let mu = config.mu.unwrap_or_else(|| config.relaxation * group_step_size(sys, g));
                    let tau = config.threshold_for(config.lambda * penalty_weight(layout, kind), mu);
                    (g, mu, tau, sys.null_groups.contains(&g.range))
                })
                .collect()
        })
        .collect();
    let mu = by_slot.iter().flatten().map(|e| e.1).fold(f64::INFINITY, f64::min);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..slots.len()).collect();
    let mut last = beta.clone();
    let mut change = f64::INFINITY;
    let mut passes = 0;
    let mut converged = false;
    let mut v = Vec::with_capacity(layout.m);
    while passes < config.max_iter {
        order.shuffle(&mut rng);
        for &slot in &order {
            for &(g, mu, tau, null) in &by_slot[slot] {
                v.clear();
                for c in g.range.clone() {
                    let grad = sys.a.row(c).iter().zip(&beta).map(|(x, y)| x * y).sum::<f64>() - sys.b[c];
                    v.push(beta[c] - mu * grad);
                }
                let mut updated = soft_threshold(&v, tau);
                if null {
                    let len = updated.len();
                    remove_null_components(&mut updated, &[0..len]);
                }
                beta[g.range.clone()].copy_from_slice(&updated);
            }
        }
        passes += 1;
        change = beta.iter().zip(&last).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let size = beta.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if !change.is_finite() || !(size <= config.divergence_bound) {
            return Err(Error::Diverged { passes, norm: size });
        }
        if change < config.epsilon {
            converged = true;
            break;
        }
        last.copy_from_slice(&beta);
    }
    let diagnostics = FitDiagnostics {
        method: FitMethod::CoordinateDescent,
        passes,
        converged,
        stop: if converged { StopReason::Converged } else { StopReason::MaxIterations },
        final_change: change,
        step: mu,
        ess: 0.0,
        warnings: Vec::new(),
    };
    Ok((beta, diagnostics))
}

/// One local fit by coordinate descent, starting from `init` or zero.
pub fn ksh_lstdq(
    design: &DesignMatrices,
    weights: &[f64],
    rewards: &[f64],
    gamma: f64,
    config: &SolverConfig,
    init: Option<&[f64]>,
) -> Result<LocalModel> {
    let sys = assemble_system(design, weights, rewards, gamma)?;
    let (beta, diagnostics) = coordinate_descent(&sys, &design.layout, config, init)?;
    Ok(LocalModel { z: f64::NAN, beta, diagnostics })
}

/// The full additive representation: one local model per grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModelGrid {
    pub models: Vec<LocalModel>,
    pub features: FeatureMap,
    pub kernel: KernelSpec,
    pub gamma: f64,
}

impl LocalModelGrid {
    /// Build a grid from explicit rows (e.g. hand-constructed coefficients).
    pub fn from_rows(
        zs: &[f64],
        rows: Vec<Vec<f64>>,
        features: FeatureMap,
        kernel: KernelSpec,
        gamma: f64,
    ) -> Result<Self> {
        check_grid(zs)?;
        if rows.len() != zs.len() || rows.iter().any(|r| r.len() != features.layout.p()) {
            return Err(Error::Dimension("coefficient rows do not match grid and layout".into()));
        }
        let models = zs
            .iter()
            .zip(rows)
            .map(|(&z, beta)| LocalModel {
                z,
                beta,
                diagnostics: FitDiagnostics {
                    method: FitMethod::Analytic,
                    passes: 0,
                    converged: true,
                    stop: StopReason::Direct,
                    final_change: 0.0,
                    step: 0.0,
                    ess: 0.0,
                    warnings: Vec::new(),
                },
            })
            .collect();
        Ok(Self { models, features, kernel, gamma })
    }

    pub fn zs(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.z).collect()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.features.layout
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.models[i].beta
    }

    /// Row-major `M x p` coefficient matrix.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        self.models.iter().map(|m| m.beta.clone()).collect()
    }

    /// Index of the grid value closest to `x` (clamped to `[0, 1]`); ties go to the lower index.
    pub fn nearest(&self, x: f64) -> usize {
        nearest_index(&self.zs(), x)
    }

    pub fn frobenius_distance(&self, other: &[Vec<f64>]) -> f64 {
        self.models
            .iter()
            .zip(other)
            .flat_map(|(m, row)| m.beta.iter().zip(row).map(|(a, b)| (a - b) * (a - b)))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn nearest_index(zs: &[f64], x: f64) -> usize {
    let x = x.clamp(0.0, 1.0);
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, z) in zs.iter().enumerate() {
        let dist = (x - z).abs();
        if dist < best_dist {
            best = i;
            best_dist = dist;
        }
    }
    best
}

fn check_grid(zs: &[f64]) -> Result<()> {
    if zs.is_empty() {
        return Err(Error::InvalidArgument("empty z grid".into()));
    }
    if zs.iter().any(|z| !(0.0..=1.0).contains(z)) {
        return Err(Error::InvalidArgument("grid values must lie in [0, 1]".into()));
    }
    if zs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("grid values must be strictly increasing".into()));
    }
    Ok(())
}

/// `count` evenly spaced values on `[0, 1]` (a single value sits at 0.5).
pub fn even_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..count).map(|i| i as f64 / (count - 1) as f64).collect(),
    }
}

/// Fit every grid value on a prepared design.
///
/// Coordinate-descent fits start from `init[i]` when given, otherwise from
/// the previous grid value's solution.
pub fn fit_grid_on_design(
    design: &DesignMatrices,
    features: &FeatureMap,
    kernel: &KernelSpec,
    zs: &[f64],
    gamma: f64,
    config: &SolverConfig,
    method: FitMethod,
    init: Option<&[Vec<f64>]>,
) -> Result<LocalModelGrid> {
    check_grid(zs)?;
    config.validate()?;
    if design.n() == 0 {
        return Err(Error::Empty("design has no rows".into()));
    }
    let p = design.p();
    let mut models: Vec<LocalModel> = Vec::with_capacity(zs.len());
    for (idx, &z) in zs.iter().enumerate() {
        let fit = || -> Result<LocalModel> {
            let kw = weight_vector(kernel, &design.candidates, z)?;
            let mut sys = assemble_system(design, &kw.weights, &design.rewards, gamma)?;
            sys.z = Some(z);
            let mut warnings = Vec::new();
            if kw.ess < p as f64 {
                warnings.push(format!("effective sample size {:.1} below coefficient count {p}", kw.ess));
            }
            let (beta, mut diagnostics) = match method {
                FitMethod::Analytic => {
                    let beta = solve_analytic(&sys, config.ridge)?;
                    let diagnostics = FitDiagnostics {
                        method,
                        passes: 0,
                        converged: true,
                        stop: StopReason::Direct,
                        final_change: 0.0,
                        step: 0.0,
                        ess: kw.ess,
                        warnings: Vec::new(),
                    };
                    (beta, diagnostics)
                }
                FitMethod::CoordinateDescent => {
                    let start = init
                        .and_then(|rows| rows.get(idx))
                        .map(|r| r.as_slice())
                        .or_else(|| models.last().map(|m| m.beta.as_slice()));
                    let cfg = SolverConfig { seed: config.seed ^ idx as u64, ..config.clone() };
                    coordinate_descent(&sys, &design.layout, &cfg, start)?
                }
            };
            for w in &warnings {
                log::warn!("z = {z}: {w}");
            }
            diagnostics.ess = kw.ess;
            diagnostics.warnings = warnings;
            Ok(LocalModel { z, beta, diagnostics })
        };
        models.push(fit().map_err(|e| e.at_z(z))?);
    }
    Ok(LocalModelGrid { models, features: features.clone(), kernel: *kernel, gamma })
}

/// Build the design for `data` and fit one local model per grid value.
#[allow(clippy::too_many_arguments)]
pub fn fit_local_grid(
    data: &BatchDataset,
    features: &FeatureMap,
    kernel: &KernelSpec,
    zs: &[f64],
    gamma: f64,
    config: &SolverConfig,
    method: FitMethod,
    next: NextAction<'_>,
) -> Result<LocalModelGrid> {
    let design = build_design(features, data, next)?;
    if design.dropped > 0 {
        log::info!("{} transitions without an observed next action left out", design.dropped);
    }
    fit_grid_on_design(&design, features, kernel, zs, gamma, config, method, None)
}

/// Which additive component to read off a fitted grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    /// The intercept at each grid value.
    Marginal,
    /// The centered expansion of one feature, evaluated over `points`.
    Joint { feature: usize, points: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentPoint {
    pub z: f64,
    pub s: Option<f64>,
    pub value: f64,
}

/// Tabulate a marginal or joint component for one action block.
pub fn extract_components(grid: &LocalModelGrid, which: &Component, action: usize) -> Result<Vec<ComponentPoint>> {
    let layout = grid.layout();
    let blocks = layout.actions.blocks();
    if action >= blocks {
        return Err(Error::OutOfRange { index: action, len: blocks });
    }
    match which {
        Component::Marginal => {
            let at = action * layout.block_len();
            Ok(grid.models.iter().map(|m| ComponentPoint { z: m.z, s: None, value: m.beta[at] }).collect())
        }
        Component::Joint { feature, points } => {
            let j = *feature;
            if j >= layout.d {
                return Err(Error::OutOfRange { index: j, len: layout.d });
            }
            if layout.exclude == Some(j) {
                return Err(Error::InvalidArgument(format!(
                    "feature {j} is the candidate variable and has no joint component"
                )));
            }
            let range = layout.group(action, GroupKind::Feature(j))?.range;
            let basis: Vec<Vec<f64>> = points.iter().map(|&s| grid.features.component(j, s)).collect();
            Ok(grid
                .models
                .iter()
                .flat_map(|m| {
                    let coef = &m.beta[range.clone()];
                    points.iter().zip(&basis).map(move |(&s, phi)| ComponentPoint {
                        z: m.z,
                        s: Some(s),
                        value: phi.iter().zip(coef).map(|(a, b)| a * b).sum(),
                    })
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::data::{Action, ActionSpace, CandidateChoice, Transition};
    use proptest::prelude::*;

    /// A design with hand-written rows and a trivial one-block layout.
    fn raw_design(phi: Vec<Vec<f64>>, phi_next: Vec<Vec<f64>>, rewards: Vec<f64>) -> DesignMatrices {
        let n = phi.len();
        let p = phi[0].len();
        let layout = FeatureLayout { d: 1, m: p - 1, exclude: None, actions: ActionSpace::Continuous };
        DesignMatrices {
            phi: DMatrix::from_fn(n, p, |r, c| phi[r][c]),
            phi_next: DMatrix::from_fn(n, p, |r, c| phi_next[r][c]),
            candidates: vec![0.5; n],
            rows: (0..n).collect(),
            dropped: 0,
            rewards,
            layout,
            null_groups: Vec::new(),
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        assert_eq!(soft_threshold(&[3.0, 4.0], 0.0), vec![3.0, 4.0]);
        let v = soft_threshold(&[3.0, 4.0], 2.5);
        assert!((v[0] - 1.5).abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
        assert_eq!(soft_threshold(&[3.0, 4.0], 5.0), vec![0.0, 0.0]);
    }

    #[test]
    fn gamma_zero_gives_normal_equations() {
        let phi = vec![vec![1.0, 0.2], vec![1.0, -0.4], vec![1.0, 0.9]];
        let design = raw_design(phi.clone(), vec![vec![0.0, 0.0]; 3], vec![1.0, 2.0, 3.0]);
        let sys = assemble_system(&design, &[1.0; 3], &design.rewards, 0.0).unwrap();
        let ata = design.phi.tr_mul(&design.phi);
        assert!((sys.a - ata).amax() < 1e-15);
        let double = assemble_system(&design, &[2.0; 3], &design.rewards, 0.0).unwrap();
        let single = assemble_system(&design, &[1.0; 3], &design.rewards, 0.0).unwrap();
        assert!((double.a - single.a * 2.0).amax() < 1e-14);
        assert!((double.b - single.b * 2.0).amax() < 1e-14);
    }

    #[test]
    fn single_row_outer_product() {
        let design = raw_design(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]], vec![3.0]);
        let sys = assemble_system(&design, &[0.5], &design.rewards, 0.9).unwrap();
        // w * phi (phi - gamma phi')^T = 0.5 * [1, 0]^T [1, -0.9]
        assert_eq!(sys.a, DMatrix::from_row_slice(2, 2, &[0.5, -0.45, 0.0, 0.0]));
        assert_eq!(sys.b.as_slice(), &[1.5, 0.0]);
    }

    #[test]
    fn rejects_mismatched_rows_and_bad_gamma() {
        let design = raw_design(vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]], vec![3.0]);
        assert!(matches!(assemble_system(&design, &[1.0, 1.0], &[3.0], 0.5), Err(Error::Dimension(_))));
        assert!(assemble_system(&design, &[1.0], &[3.0], 1.0).is_err());
    }

    #[test]
    fn self_loop_chain_gives_geometric_value() {
        // two states, one action, each state loops to itself, r = 1, gamma = 0.5
        let phi = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let design = raw_design(phi.clone(), phi, vec![1.0, 1.0]);
        let sys = assemble_system(&design, &[1.0, 1.0], &design.rewards, 0.5).unwrap();
        let beta = solve_analytic(&sys, 0.0).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_system_is_singular_without_ridge() {
        let sys = FixedPointSystem {
            a: DMatrix::zeros(2, 2),
            b: DVector::zeros(2),
            gamma: 0.0,
            z: None,
            null_groups: Vec::new(),
        };
        let err = solve_analytic(&sys, 0.0).unwrap_err();
        assert!(matches!(&err, Error::Singular(msg) if msg.contains("ridge")));
        assert_eq!(solve_analytic(&sys, 1e-8).unwrap(), vec![0.0, 0.0]);
    }

    fn small_dataset(n: usize, seed: u64) -> BatchDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts = (0..n)
            .map(|i| {
                let s: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                let a = rng.gen_range(0..2);
                Transition {
                    reward: (3.0 * s[1]).sin() + a as f64 * s[2] + 0.1 * rng.gen::<f64>(),
                    next_state: (0..3).map(|_| rng.gen::<f64>()).collect(),
                    candidate: s[0],
                    state: s,
                    action: Action::Discrete(a),
                    trajectory_id: format!("t{}", i / 10),
                    time_index: (i % 10) as u64,
                }
            })
            .collect();
        BatchDataset::new(ts, 3, ActionSpace::Discrete { k: 2 }, CandidateChoice::Feature(0)).unwrap()
    }

    fn small_system(gamma: f64) -> (DesignMatrices, Vec<f64>, FixedPointSystem) {
        let data = small_dataset(200, 3);
        let map = FeatureMap::fit(BasisSpec::bspline(4, 2).unwrap(), &data).unwrap();
        let design = build_design(&map, &data, NextAction::Observed).unwrap();
        let kw = weight_vector(&KernelSpec::gaussian(0.3).unwrap(), &design.candidates, 0.4).unwrap();
        let sys = assemble_system(&design, &kw.weights, &design.rewards, gamma).unwrap();
        (design, kw.weights, sys)
    }

    #[test]
    fn analytic_solution_is_a_fixed_point() {
        let (design, w, sys) = small_system(0.6);
        let beta = solve_analytic(&sys, 1e-10).unwrap();
        for g in design.layout.groups() {
            let grad = group_gradient(&design, &w, &design.rewards, 0.6, &beta, g.block, g.kind).unwrap();
            let scale = 1.0 + sys.b.amax();
            assert!(grad.iter().all(|v| v.abs() < 1e-8 * scale), "{g:?}: {grad:?}");
        }
    }

    #[test]
    fn gradient_at_zero_is_minus_b() {
        let (design, w, sys) = small_system(0.3);
        let zero = vec![0.0; design.p()];
        for g in design.layout.groups() {
            let grad = group_gradient(&design, &w, &design.rewards, 0.3, &zero, g.block, g.kind).unwrap();
            for (c, v) in g.range.zip(grad) {
                assert!((v + sys.b[c]).abs() < 1e-10);
            }
        }
        assert!(group_gradient(&design, &w, &design.rewards, 0.3, &zero, 2, GroupKind::Intercept).is_err());
        assert!(group_gradient(&design, &w, &design.rewards, 0.3, &zero, 0, GroupKind::Feature(0)).is_err());
    }

    #[test]
    fn gradient_matches_system_rows() {
        let (design, w, sys) = small_system(0.5);
        let beta: Vec<f64> = (0..design.p()).map(|i| (i as f64 * 0.37).sin()).collect();
        let full = &sys.a * DVector::from_column_slice(&beta) - &sys.b;
        for g in design.layout.groups() {
            let grad = group_gradient(&design, &w, &design.rewards, 0.5, &beta, g.block, g.kind).unwrap();
            for (c, v) in g.range.zip(grad) {
                assert!((v - full[c]).abs() < 1e-9 * (1.0 + full.amax()));
            }
        }
    }

    #[test]
    fn unpenalized_descent_reaches_the_analytic_solution() {
        let (design, _, sys) = small_system(0.0);
        let exact = solve_analytic(&sys, 0.0);
        // the bspline groups make A singular without the ridge
        assert!(exact.is_err());
        let exact = solve_analytic(&sys, 1e-10).unwrap();
        let config = SolverConfig { epsilon: 1e-10, max_iter: 200_000, ..Default::default() };
        let (beta, diag) = coordinate_descent(&sys, &design.layout, &config, None).unwrap();
        assert!(diag.converged);
        let err = beta.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn huge_penalty_zeroes_every_group() {
        let (design, _, sys) = small_system(0.5);
        let lambda = 10.0 * lambda_max(&sys, &design.layout);
        let config = SolverConfig { lambda, ..Default::default() };
        let (beta, diag) = coordinate_descent(&sys, &design.layout, &config, None).unwrap();
        assert!(beta.iter().all(|&v| v == 0.0));
        assert!(diag.converged);
    }

    #[test]
    fn same_seed_same_iterates() {
        let (design, _, sys) = small_system(0.5);
        let config = SolverConfig { lambda: 0.5, max_iter: 7, seed: 11, ..Default::default() };
        let a = coordinate_descent(&sys, &design.layout, &config, None).unwrap();
        let b = coordinate_descent(&sys, &design.layout, &config, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn literal_threshold_kills_everything_at_small_steps() {
        let (design, _, sys) = small_system(0.0);
        let config = SolverConfig {
            lambda: 1e-3,
            mu: Some(1e-4),
            threshold: ThresholdConvention::InverseStep,
            ..Default::default()
        };
        let (beta, _) = coordinate_descent(&sys, &design.layout, &config, None).unwrap();
        assert!(beta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_step_diverges() {
        let (design, _, sys) = small_system(0.0);
        let config = SolverConfig { mu: Some(10.0), max_iter: 10_000, ..Default::default() };
        let err = coordinate_descent(&sys, &design.layout, &config, None).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn grid_fits_and_components() {
        let data = small_dataset(300, 5);
        let map = FeatureMap::fit(BasisSpec::bspline(4, 2).unwrap(), &data).unwrap();
        let kernel = KernelSpec::gaussian(0.2).unwrap();
        let zs = even_grid(5);
        let config = SolverConfig { lambda: 1.0, ..Default::default() };
        let grid = fit_local_grid(
            &data,
            &map,
            &kernel,
            &zs,
            0.5,
            &config,
            FitMethod::CoordinateDescent,
            NextAction::Observed,
        )
        .unwrap();
        assert_eq!(grid.len(), 5);
        assert_eq!(grid.zs(), zs);
        let marginal = extract_components(&grid, &Component::Marginal, 1).unwrap();
        let block = map.layout.block_len();
        for (pt, m) in marginal.iter().zip(&grid.models) {
            assert_eq!(pt.value, m.beta[block]);
        }
        let points = vec![0.0, 0.5, 1.0];
        let joint = extract_components(&grid, &Component::Joint { feature: 1, points: points.clone() }, 0).unwrap();
        assert_eq!(joint.len(), 15);
        assert!(extract_components(&grid, &Component::Joint { feature: 0, points }, 0).is_err());
        assert!(extract_components(&grid, &Component::Marginal, 2).is_err());

        let single = fit_local_grid(
            &data,
            &map,
            &kernel,
            &[0.3],
            0.5,
            &config,
            FitMethod::CoordinateDescent,
            NextAction::Observed,
        )
        .unwrap();
        let design = build_design(&map, &data, NextAction::Observed).unwrap();
        let kw = weight_vector(&kernel, &design.candidates, 0.3).unwrap();
        let direct = ksh_lstdq(&design, &kw.weights, &design.rewards, 0.5, &config, None).unwrap();
        assert_eq!(single.models[0].beta, direct.beta);
    }

    #[test]
    fn zero_feature_group_gives_zero_surface() {
        let data = small_dataset(50, 9);
        let map = FeatureMap::fit(BasisSpec::bspline(4, 2).unwrap(), &data).unwrap();
        let p = map.layout.p();
        let mut row = vec![0.0; p];
        row[0] = 2.5;
        let grid = LocalModelGrid::from_rows(&[0.2, 0.8], vec![row.clone(), row], map, KernelSpec::gaussian(0.1).unwrap(), 0.5)
            .unwrap();
        let joint = extract_components(&grid, &Component::Joint { feature: 2, points: even_grid(11) }, 0).unwrap();
        assert!(joint.iter().all(|p| p.value == 0.0));
        let marginal = extract_components(&grid, &Component::Marginal, 0).unwrap();
        assert!(marginal.iter().all(|p| p.value == 2.5));
    }

    #[test]
    fn boxcar_gap_names_the_grid_point() {
        let data = small_dataset(100, 1);
        let shifted: Vec<Transition> = data
            .transitions()
            .iter()
            .map(|t| Transition { candidate: 0.5 * t.candidate, ..t.clone() })
            .collect();
        let data = BatchDataset::new(shifted, 3, data.actions(), CandidateChoice::Column).unwrap();
        let map = FeatureMap::fit(BasisSpec::bspline(3, 1).unwrap(), &data).unwrap();
        let kernel = KernelSpec::new(crate::kernel::KernelFamily::Boxcar, 0.05).unwrap();
        let err = fit_local_grid(
            &data,
            &map,
            &kernel,
            &[0.25, 1.0],
            0.0,
            &SolverConfig::default(),
            FitMethod::Analytic,
            NextAction::Observed,
        )
        .unwrap_err();
        assert!(matches!(err, Error::AtGridPoint { z, .. } if z == 1.0));
        assert!(err.is_numerical());
    }

    #[test]
    fn nearest_ties_go_low() {
        let zs = [0.0, 0.5, 1.0];
        assert_eq!(nearest_index(&zs, 0.6), 1);
        assert_eq!(nearest_index(&zs, 0.25), 0);
        assert_eq!(nearest_index(&zs, 0.75), 1);
        assert_eq!(nearest_index(&zs, 7.0), 2);
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(&[]).is_err());
        assert!(check_grid(&[0.2, 0.2]).is_err());
        assert!(check_grid(&[0.5, 1.5]).is_err());
        assert_eq!(even_grid(25).len(), 25);
        assert_eq!(even_grid(3), vec![0.0, 0.5, 1.0]);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_nonexpansive(
            u in proptest::collection::vec(-5.0f64..5.0, 4),
            v in proptest::collection::vec(-5.0f64..5.0, 4),
            t in 0.0f64..6.0,
        ) {
            let (su, sv) = (soft_threshold(&u, t), soft_threshold(&v, t));
            let d_out: f64 = su.iter().zip(&sv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let d_in: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d_out <= d_in + 1e-12);
        }
    }
}
