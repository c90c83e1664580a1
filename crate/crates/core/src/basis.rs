//! Centered basis expansions and the block state-action design matrices.
//!
//! Each non-excluded state feature contributes `m` centered basis columns;
//! a leading intercept completes the per-action block, and in discrete mode
//! the block is replicated once per action with only the taken action's
//! block populated.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Action, ActionSpace, BatchDataset};
use crate::error::{Error, Result};
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    Bspline,
    Trigonometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub m: usize,
    pub degree: usize,
    /// Full clamped knot vector (bspline only), `m + degree + 1` entries.
    pub knots: Vec<f64>,
}

impl BasisSpec {
    /// `m` B-splines of the given degree on clamped uniform knots over `[0, 1]`.
    pub fn bspline(m: usize, degree: usize) -> Result<Self> {
        if m < 2 || m < degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "bspline basis needs m >= max(2, degree + 1), got m = {m}, degree = {degree}"
            )));
        }
        let intervals = m - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..intervals).map(|i| i as f64 / intervals as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self { family: BasisFamily::Bspline, m, degree, knots })
    }

    /// B-splines on an explicit full knot vector.
    pub fn bspline_with_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < degree + 3 {
            return Err(Error::InvalidArgument("too few knots for two basis functions".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) || knots.iter().any(|&k| !(0.0..=1.0).contains(&k)) {
            return Err(Error::InvalidArgument("knots must be nondecreasing within [0, 1]".into()));
        }
        if knots[degree] >= knots[knots.len() - degree - 1] {
            return Err(Error::InvalidArgument("knot vector has an empty domain".into()));
        }
        let m = knots.len() - degree - 1;
        Ok(Self { family: BasisFamily::Bspline, m, degree, knots })
    }

    /// Columns `sin(2 pi q s), cos(2 pi q s)` for `q = 1, 2, ...`, truncated to `m`.
    pub fn trigonometric(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("trigonometric basis needs m >= 2, got {m}")));
        }
        Ok(Self { family: BasisFamily::Trigonometric, m, degree: 0, knots: Vec::new() })
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            BasisFamily::Bspline => {
                let rebuilt = Self::bspline_with_knots(self.degree, self.knots.clone())?;
                if rebuilt.m != self.m {
                    return Err(Error::InvalidArgument(format!(
                        "{} knots of degree {} give {} functions, not {}",
                        self.knots.len(),
                        self.degree,
                        rebuilt.m,
                        self.m
                    )));
                }
                Ok(())
            }
            BasisFamily::Trigonometric => Self::trigonometric(self.m).map(|_| ()),
        }
    }

    /// Evaluate all `m` basis functions at `s`, clamped to `[0, 1]`.
    pub fn eval(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.eval_into(s, &mut out);
        out
    }

    pub fn eval_into(&self, s: f64, out: &mut [f64]) {
        let s = s.clamp(0.0, 1.0);
        match self.family {
            BasisFamily::Bspline => self.eval_bspline(s, out),
            BasisFamily::Trigonometric => {
                for (c, o) in out.iter_mut().enumerate() {
                    let arg = 2.0 * std::f64::consts::PI * (c / 2 + 1) as f64 * s;
                    *o = if c % 2 == 0 { arg.sin() } else { arg.cos() };
                }
            }
        }
    }

    /// Cox-de Boor recursion over the degree + 1 functions supported at `s`.
    fn eval_bspline(&self, s: f64, out: &mut [f64]) {
        let p = self.degree;
        let t = &self.knots;
        out.iter_mut().for_each(|o| *o = 0.0);
        // span with t[span] <= s < t[span + 1]; the right end uses the last nonempty span
        let span = if s >= t[self.m] {
            (p..self.m).rev().find(|&i| t[i] < t[i + 1]).unwrap_or(self.m - 1)
        } else {
            (p..self.m).rev().find(|&i| t[i] <= s).unwrap_or(p)
        };
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = s - t[span + 1 - j];
            right[j] = t[span + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        for (r, v) in n.into_iter().enumerate() {
            out[span - p + r] = v;
        }
    }
}

/// Empirical basis means per feature, `means[j][l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    pub means: Vec<Vec<f64>>,
}

/// Average each basis function over the training states.
pub fn fit_centering(spec: &BasisSpec, data: &BatchDataset) -> Result<CenteringStats> {
    if data.is_empty() {
        return Err(Error::Empty("cannot center a basis on an empty dataset".into()));
    }
    let n = data.len() as f64;
    let mut means = vec![vec![0.0; spec.m]; data.d()];
    let mut buf = vec![0.0; spec.m];
    for t in data.transitions() {
        for (j, mean) in means.iter_mut().enumerate() {
            spec.eval_into(t.state[j], &mut buf);
            mean.iter_mut().zip(&buf).for_each(|(acc, v)| *acc += v);
        }
    }
    means.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(CenteringStats { means })
}

/// Which coefficients a group covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    Intercept,
    Feature(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    /// Action block (0 in continuous mode).
    pub block: usize,
    pub kind: GroupKind,
    pub range: Range<usize>,
}

/// Shape of the coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub d: usize,
    pub m: usize,
    pub exclude: Option<usize>,
    pub actions: ActionSpace,
}

impl FeatureLayout {
    pub fn d_eff(&self) -> usize {
        self.d - usize::from(self.exclude.is_some())
    }

    /// Length of one action block: intercept plus `d_eff * m`.
    pub fn block_len(&self) -> usize {
        1 + self.d_eff() * self.m
    }

    pub fn p(&self) -> usize {
        self.block_len() * self.actions.blocks()
    }

    /// Feature indices present in the additive sum, ascending.
    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.d).filter(move |&j| Some(j) != self.exclude)
    }

    /// Groups in coefficient order: per block, the intercept then each feature.
    pub fn groups(&self) -> Vec<Group> {
        let mut out = Vec::new();
        for block in 0..self.actions.blocks() {
            let base = block * self.block_len();
            out.push(Group { block, kind: GroupKind::Intercept, range: base..base + 1 });
            for (slot, j) in self.features().enumerate() {
                let start = base + 1 + slot * self.m;
                out.push(Group { block, kind: GroupKind::Feature(j), range: start..start + self.m });
            }
        }
        out
    }

    pub fn group(&self, block: usize, kind: GroupKind) -> Result<Group> {
        self.groups()
            .into_iter()
            .find(|g| g.block == block && g.kind == kind)
            .ok_or_else(|| Error::InvalidArgument(format!("no group {kind:?} in block {block}")))
    }
}

/// Everything needed to evaluate `phi(s, a)`: basis, centering, excluded
/// feature and action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub basis: BasisSpec,
    pub centering: CenteringStats,
    pub layout: FeatureLayout,
}

impl FeatureMap {
    pub fn new(
        basis: BasisSpec,
        centering: CenteringStats,
        exclude: Option<usize>,
        actions: ActionSpace,
    ) -> Result<Self> {
        basis.validate()?;
        let d = centering.means.len();
        if d == 0 || centering.means.iter().any(|row| row.len() != basis.m) {
            return Err(Error::Dimension("centering means do not match the basis".into()));
        }
        if let Some(i) = exclude {
            if i >= d {
                return Err(Error::OutOfRange { index: i, len: d });
            }
        }
        let layout = FeatureLayout { d, m: basis.m, exclude, actions };
        Ok(Self { basis, centering, layout })
    }

    /// Fit centering on `data` and take the exclusion and action space from it.
    pub fn fit(basis: BasisSpec, data: &BatchDataset) -> Result<Self> {
        let centering = fit_centering(&basis, data)?;
        Self::new(basis, centering, data.candidate_choice().excluded_feature(), data.actions())
    }

    /// Centered basis vector of feature `j` at value `v`.
    pub fn component(&self, j: usize, v: f64) -> Vec<f64> {
        let mut out = self.basis.eval(v);
        out.iter_mut().zip(&self.centering.means[j]).for_each(|(o, m)| *o -= m);
        out
    }

    /// Write the block `(1, phi_j(s_j)...)` into `out` (length `block_len`).
    fn fill_block(&self, s: &[f64], out: &mut [f64]) {
        let m = self.layout.m;
        out[0] = 1.0;
        for (slot, j) in self.layout.features().enumerate() {
            let dst = &mut out[1 + slot * m..1 + (slot + 1) * m];
            self.basis.eval_into(s[j], dst);
            dst.iter_mut().zip(&self.centering.means[j]).for_each(|(o, mean)| *o -= mean);
        }
    }

    pub fn feature_vector(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.layout.d {
            return Err(Error::Dimension(format!("state has {} features, expected {}", s.len(), self.layout.d)));
        }
        let mut out = vec![0.0; self.layout.block_len()];
        self.fill_block(s, &mut out);
        Ok(out)
    }

    /// `phi(s, a)`: the block vector placed at the action's block.
    pub fn state_action(&self, s: &[f64], a: Action) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.layout.p()];
        self.state_action_into(s, a, &mut out)?;
        Ok(out)
    }

    pub fn state_action_into(&self, s: &[f64], a: Action, out: &mut [f64]) -> Result<()> {
        if s.len() != self.layout.d {
            return Err(Error::Dimension(format!("state has {} features, expected {}", s.len(), self.layout.d)));
        }
        let len = self.layout.block_len();
        let block = match (self.layout.actions, a) {
            (ActionSpace::Discrete { k }, Action::Discrete(a)) if a < k => a,
            (ActionSpace::Discrete { k }, Action::Discrete(a)) => {
                return Err(Error::OutOfRange { index: a, len: k })
            }
            (ActionSpace::Continuous, _) => 0,
            (ActionSpace::Discrete { .. }, Action::Continuous(_)) => {
                return Err(Error::InvalidArgument("continuous action in discrete mode".into()))
            }
        };
        out.iter_mut().for_each(|o| *o = 0.0);
        self.fill_block(s, &mut out[block * len..(block + 1) * len]);
        Ok(())
    }

    /// Index ranges of feature groups whose centered columns sum to zero,
    /// i.e. directions along which the design is constant.
    pub fn null_groups(&self) -> Vec<Range<usize>> {
        match self.basis.family {
            BasisFamily::Bspline => self
                .layout
                .groups()
                .into_iter()
                .filter(|g| matches!(g.kind, GroupKind::Feature(_)))
                .map(|g| g.range)
                .collect(),
            BasisFamily::Trigonometric => Vec::new(),
        }
    }
}

/// Free-function form of [`FeatureMap::feature_vector`].
pub fn feature_vector(
    spec: &BasisSpec,
    stats: &CenteringStats,
    s: &[f64],
    exclude: Option<usize>,
) -> Result<Vec<f64>> {
    FeatureMap::new(spec.clone(), stats.clone(), exclude, ActionSpace::Continuous)?.feature_vector(s)
}

/// Free-function form of [`FeatureMap::state_action`] for discrete actions.
pub fn state_action_features(
    spec: &BasisSpec,
    stats: &CenteringStats,
    s: &[f64],
    a: usize,
    k: usize,
    exclude: Option<usize>,
) -> Result<Vec<f64>> {
    FeatureMap::new(spec.clone(), stats.clone(), exclude, ActionSpace::Discrete { k })?
        .state_action(s, Action::Discrete(a))
}

/// Source of the next action used in `phi_next`.
#[derive(Clone, Copy)]
pub enum NextAction<'a> {
    /// The action recorded at the following time step of the same trajectory.
    Observed,
    /// The action a policy takes at the next state.
    Policy(&'a dyn Policy),
}

/// Assembled design for one dataset.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub phi: DMatrix<f64>,
    pub phi_next: DMatrix<f64>,
    pub rewards: Vec<f64>,
    pub candidates: Vec<f64>,
    /// Dataset index of each design row.
    pub rows: Vec<usize>,
    /// Transitions left out for lack of an observed next action.
    pub dropped: usize,
    pub layout: FeatureLayout,
    pub null_groups: Vec<Range<usize>>,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.layout.p()
    }
}

/// Build `phi` and `phi_next` row by row.
pub fn build_design(map: &FeatureMap, data: &BatchDataset, next: NextAction<'_>) -> Result<DesignMatrices> {
    let selected: Vec<(usize, Action)> = match next {
        NextAction::Observed => data
            .observed_next_actions()
            .into_iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|a| (i, a)))
            .collect(),
        NextAction::Policy(policy) => data
            .transitions()
            .iter()
            .enumerate()
            .map(|(i, t)| policy.action(&t.next_state, next_candidate(data, i)).map(|a| (i, a)))
            .collect::<Result<_>>()?,
    };
    design_for_rows(map, data, &selected)
}

/// Candidate value paired with the next state of transition `i`.
pub(crate) fn next_candidate(data: &BatchDataset, i: usize) -> f64 {
    let t = &data.transitions()[i];
    match data.candidate_choice() {
        crate::data::CandidateChoice::Feature(j) => t.next_state[j],
        _ => t.candidate,
    }
}

/// Design restricted to `rows`, each paired with its next action.
pub(crate) fn design_for_rows(
    map: &FeatureMap,
    data: &BatchDataset,
    rows: &[(usize, Action)],
) -> Result<DesignMatrices> {
    let p = map.layout.p();
    let n = rows.len();
    let mut phi = DMatrix::zeros(n, p);
    let mut phi_next = DMatrix::zeros(n, p);
    let mut buf = vec![0.0; p];
    for (r, &(i, a_next)) in rows.iter().enumerate() {
        let t = &data.transitions()[i];
        map.state_action_into(&t.state, t.action, &mut buf)?;
        phi.row_mut(r).iter_mut().zip(&buf).for_each(|(dst, v)| *dst = *v);
        map.state_action_into(&t.next_state, a_next, &mut buf)?;
        phi_next.row_mut(r).iter_mut().zip(&buf).for_each(|(dst, v)| *dst = *v);
    }
    Ok(DesignMatrices {
        phi,
        phi_next,
        rewards: rows.iter().map(|&(i, _)| data.transitions()[i].reward).collect(),
        candidates: rows.iter().map(|&(i, _)| data.transitions()[i].candidate).collect(),
        rows: rows.iter().map(|&(i, _)| i).collect(),
        dropped: data.len() - n,
        layout: map.layout,
        null_groups: map.null_groups(),
    })
}
