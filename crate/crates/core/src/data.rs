//! Transitions, batch datasets and the preprocessing steps applied to them
//! before fitting: CSV ingestion, `[0, 1]` normalization, action
//! binarization, trajectory-level splitting and candidate selection.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An action as recorded in a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match *self {
            Action::Discrete(a) => Some(a),
            Action::Continuous(_) => None,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Action::Discrete(a) => a as f64,
            Action::Continuous(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete { k: usize },
    Continuous,
}

impl ActionSpace {
    /// Number of action blocks in the design (1 in continuous mode).
    pub fn blocks(&self) -> usize {
        match *self {
            ActionSpace::Discrete { k } => k,
            ActionSpace::Continuous => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }
}

/// Which variable plays the role of the candidate `x` indexing the local models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateChoice {
    /// A state feature; its block is left out of the additive sum.
    Feature(usize),
    /// The continuous action itself.
    Action,
    /// A separate column (e.g. a time-invariant confounder).
    Column,
}

impl CandidateChoice {
    pub fn excluded_feature(&self) -> Option<usize> {
        match *self {
            CandidateChoice::Feature(i) => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub candidate: f64,
    pub trajectory_id: String,
    pub time_index: u64,
}

/// An ordered, validated collection of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDataset {
    transitions: Vec<Transition>,
    d: usize,
    actions: ActionSpace,
    candidate: CandidateChoice,
}

impl BatchDataset {
    pub fn new(
        transitions: Vec<Transition>,
        d: usize,
        actions: ActionSpace,
        candidate: CandidateChoice,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if let ActionSpace::Discrete { k } = actions {
            if k == 0 {
                return Err(Error::InvalidArgument("action count must be positive".into()));
            }
        }
        match candidate {
            CandidateChoice::Feature(i) if i >= d => {
                return Err(Error::OutOfRange { index: i, len: d })
            }
            CandidateChoice::Action if actions.is_discrete() => {
                return Err(Error::InvalidArgument(
                    "the action can only be the candidate in continuous mode".into(),
                ))
            }
            _ => {}
        }
        let mut last_time: HashMap<&str, u64> = HashMap::new();
        for (i, t) in transitions.iter().enumerate() {
            if t.state.len() != d || t.next_state.len() != d {
                return Err(Error::Dimension(format!(
                    "transition {i} has state lengths {}/{}, expected {d}",
                    t.state.len(),
                    t.next_state.len()
                )));
            }
            match (t.action, actions) {
                (Action::Discrete(a), ActionSpace::Discrete { k }) if a >= k => {
                    return Err(Error::OutOfRange { index: a, len: k })
                }
                (Action::Discrete(_), ActionSpace::Discrete { .. }) => {}
                (Action::Continuous(v), ActionSpace::Continuous) if v.is_finite() => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "transition {i}: action {:?} does not match {:?}",
                        t.action, actions
                    )))
                }
            }
            if !t.candidate.is_finite() || !t.reward.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "transition {i}: reward and candidate must be finite"
                )));
            }
            if let Some(prev) = last_time.insert(&t.trajectory_id, t.time_index) {
                if t.time_index <= prev {
                    return Err(Error::InvalidArgument(format!(
                        "trajectory `{}`: time index {} does not follow {prev}",
                        t.trajectory_id, t.time_index
                    )));
                }
            }
        }
        Ok(Self { transitions, d, actions, candidate })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn actions(&self) -> ActionSpace {
        self.actions
    }

    pub fn candidate_choice(&self) -> CandidateChoice {
        self.candidate
    }

    /// Trajectory ids in order of first appearance.
    pub fn trajectory_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.transitions
            .iter()
            .filter(|t| seen.insert(t.trajectory_id.as_str()))
            .map(|t| t.trajectory_id.clone())
            .collect()
    }

    /// For each transition, the action of the transition that follows it
    /// (same trajectory, next time index), if one was observed.
    pub fn observed_next_actions(&self) -> Vec<Option<Action>> {
        let index: HashMap<(&str, u64), usize> = self
            .transitions
            .iter()
            .enumerate()
            .map(|(i, t)| ((t.trajectory_id.as_str(), t.time_index), i))
            .collect();
        self.transitions
            .iter()
            .map(|t| {
                index
                    .get(&(t.trajectory_id.as_str(), t.time_index + 1))
                    .map(|&j| self.transitions[j].action)
            })
            .collect()
    }

    /// Keep only the transitions whose trajectory id is in `ids`.
    pub fn subset(&self, ids: &HashSet<String>) -> BatchDataset {
        BatchDataset {
            transitions: self
                .transitions
                .iter()
                .filter(|t| ids.contains(&t.trajectory_id))
                .cloned()
                .collect(),
            ..*self
        }
    }

    fn with_transitions(&self, transitions: Vec<Transition>) -> BatchDataset {
        BatchDataset { transitions, ..*self }
    }
}

/// Where the candidate value of each transition comes from during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateSource {
    Column(String),
    Feature(usize),
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    /// Integer-coded actions; `k` defaults to the largest observed index + 1.
    Discrete { k: Option<usize> },
    Continuous,
}

/// Mapping from the trajectory CSV columns onto transition fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectorySchema {
    pub trajectory_id: String,
    pub time: String,
    pub state: Vec<String>,
    pub action: String,
    pub reward: String,
    pub candidate: CandidateSource,
    pub action_kind: ActionKind,
}

impl TrajectorySchema {
    /// The default layout: `traj_id, t, s_0..s_{d-1}, action, reward` and optional `x`.
    pub fn standard(d: usize, candidate: CandidateSource, action_kind: ActionKind) -> Self {
        Self {
            trajectory_id: "traj_id".into(),
            time: "t".into(),
            state: (0..d).map(|j| format!("s_{j}")).collect(),
            action: "action".into(),
            reward: "reward".into(),
            candidate,
            action_kind,
        }
    }

    /// Number of `s_<j>` columns in a header, assuming the standard layout.
    pub fn count_state_columns(header: &csv::StringRecord) -> usize {
        (0..).take_while(|j| header.iter().any(|h| h == format!("s_{j}"))).count()
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f == "NA"
}

struct Row {
    line: u64,
    time: u64,
    state: Vec<f64>,
    action: f64,
    reward: f64,
    x: Option<f64>,
}

/// Read trajectory rows from CSV and pair consecutive rows into transitions.
///
/// Rows with any missing value are dropped before pairing, so no transition
/// spans a gap in the time index. The final row of each trajectory yields no
/// transition.
pub fn ingest_trajectories<R: Read>(source: R, schema: &TrajectorySchema) -> Result<BatchDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let id_col = col(&schema.trajectory_id)?;
    let time_col = col(&schema.time)?;
    let state_cols = schema.state.iter().map(|s| col(s)).collect::<Result<Vec<_>>>()?;
    let action_col = col(&schema.action)?;
    let reward_col = col(&schema.reward)?;
    let x_col = match &schema.candidate {
        CandidateSource::Column(name) => Some(col(name)?),
        _ => None,
    };
    let d = state_cols.len();
    if d == 0 {
        return Err(Error::InvalidArgument("schema names no state columns".into()));
    }
    let candidate = match schema.candidate {
        CandidateSource::Column(_) => CandidateChoice::Column,
        CandidateSource::Feature(i) if i >= d => return Err(Error::OutOfRange { index: i, len: d }),
        CandidateSource::Feature(i) => CandidateChoice::Feature(i),
        CandidateSource::Action => CandidateChoice::Action,
    };

    let mut trajectories: Vec<(String, Vec<Row>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("");
        let mut needed: Vec<usize> = vec![time_col, action_col, reward_col];
        needed.extend(&state_cols);
        needed.extend(x_col);
        if is_missing(field(id_col)) || needed.iter().any(|&c| is_missing(field(c))) {
            continue;
        }
        let number = |c: usize| -> Result<f64> {
            let raw = field(c).trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Row {
                    row: line,
                    message: format!("column `{}`: `{raw}` is not a number", &header[c]),
                })
        };
        let time = number(time_col)?;
        if time < 0.0 || time.fract() != 0.0 {
            return Err(Error::Row {
                row: line,
                message: format!("time index `{}` is not a non-negative integer", field(time_col)),
            });
        }
        let row = Row {
            line,
            time: time as u64,
            state: state_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?,
            action: number(action_col)?,
            reward: number(reward_col)?,
            x: x_col.map(number).transpose()?,
        };
        let id = field(id_col).trim().to_string();
        let k = *slot.entry(id.clone()).or_insert_with(|| {
            trajectories.push((id, Vec::new()));
            trajectories.len() - 1
        });
        trajectories[k].1.push(row);
    }

    let mut max_action = 0usize;
    let mut transitions = Vec::new();
    for (id, mut rows) in trajectories {
        rows.sort_by_key(|r| r.time);
        if let Some(w) = rows.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(Error::Row {
                row: w[1].line,
                message: format!("trajectory `{id}` repeats time index {}", w[1].time),
            });
        }
        for w in rows.windows(2) {
            let (cur, next) = (&w[0], &w[1]);
            if next.time != cur.time + 1 {
                continue;
            }
            let action = match schema.action_kind {
                ActionKind::Discrete { .. } => {
                    if cur.action < 0.0 || cur.action.fract() != 0.0 {
                        return Err(Error::Row {
                            row: cur.line,
                            message: format!("action `{}` is not a discrete index", cur.action),
                        });
                    }
                    let a = cur.action as usize;
                    max_action = max_action.max(a);
                    Action::Discrete(a)
                }
                ActionKind::Continuous => Action::Continuous(cur.action),
            };
            let candidate = match schema.candidate {
                CandidateSource::Column(_) => cur.x.unwrap_or(f64::NAN),
                CandidateSource::Feature(i) => cur.state[i],
                CandidateSource::Action => cur.action,
            };
            transitions.push(Transition {
                state: cur.state.clone(),
                action,
                reward: cur.reward,
                next_state: next.state.clone(),
                candidate,
                trajectory_id: id.clone(),
                time_index: cur.time,
            });
        }
    }
    if transitions.is_empty() {
        return Err(Error::Empty("no consecutive rows to pair into transitions".into()));
    }
    let actions = match schema.action_kind {
        ActionKind::Discrete { k } => ActionSpace::Discrete { k: k.unwrap_or(max_action + 1) },
        ActionKind::Continuous => ActionSpace::Continuous,
    };
    BatchDataset::new(transitions, d, actions, candidate)
}

/// Per-feature affine map onto `[0, 1]`, kept for reuse at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Range of a continuous action, when the dataset has one.
    pub action: Option<[f64; 2]>,
    /// Range of a separate candidate column.
    pub candidate: Option<[f64; 2]>,
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn from_unit(u: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + u * (hi - lo)
    } else {
        lo
    }
}

fn range_of(values: impl Iterator<Item = f64>) -> [f64; 2] {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
}

impl NormalizationSpec {
    /// Compute ranges over states and next states jointly.
    pub fn fit(data: &BatchDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("cannot normalize an empty dataset".into()));
        }
        let d = data.d();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for t in data.transitions() {
            for s in [&t.state, &t.next_state] {
                for j in 0..d {
                    min[j] = min[j].min(s[j]);
                    max[j] = max[j].max(s[j]);
                }
            }
        }
        let action = (data.actions() == ActionSpace::Continuous)
            .then(|| range_of(data.transitions().iter().map(|t| t.action.value())));
        let candidate = (data.candidate_choice() == CandidateChoice::Column)
            .then(|| range_of(data.transitions().iter().map(|t| t.candidate)));
        Ok(Self { min, max, action, candidate })
    }

    /// Indices of features whose training range is a single point.
    pub fn degenerate_features(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&j| self.max[j] <= self.min[j]).collect()
    }

    pub fn normalize_feature(&self, j: usize, v: f64) -> f64 {
        unit(v, self.min[j], self.max[j])
    }

    pub fn denormalize_feature(&self, j: usize, u: f64) -> f64 {
        from_unit(u, self.min[j], self.max[j])
    }

    pub fn normalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter().enumerate().map(|(j, &v)| self.normalize_feature(j, v)).collect()
    }

    pub fn denormalize_state(&self, s: &[f64]) -> Vec<f64> {
        s.iter().enumerate().map(|(j, &u)| self.denormalize_feature(j, u)).collect()
    }

    /// Map a separate candidate column value; identity when there is none.
    pub fn normalize_candidate(&self, v: f64) -> f64 {
        match self.candidate {
            Some([lo, hi]) => unit(v, lo, hi),
            None => v,
        }
    }

    pub fn denormalize_candidate(&self, u: f64) -> f64 {
        match self.candidate {
            Some([lo, hi]) => from_unit(u, lo, hi),
            None => u,
        }
    }

    /// Map a normalized candidate value back to data units.
    pub fn candidate_to_raw(&self, choice: CandidateChoice, u: f64) -> f64 {
        match choice {
            CandidateChoice::Feature(j) => self.denormalize_feature(j, u),
            CandidateChoice::Column => self.denormalize_candidate(u),
            CandidateChoice::Action => self.denormalize_action(u),
        }
    }

    pub fn normalize_action(&self, v: f64) -> f64 {
        match self.action {
            Some([lo, hi]) => unit(v, lo, hi),
            None => v,
        }
    }

    pub fn denormalize_action(&self, u: f64) -> f64 {
        match self.action {
            Some([lo, hi]) => from_unit(u, lo, hi),
            None => u,
        }
    }

    /// Apply the stored ranges to a dataset (e.g. a validation split).
    pub fn apply(&self, data: &BatchDataset) -> Result<BatchDataset> {
        if self.min.len() != data.d() {
            return Err(Error::Dimension(format!(
                "normalization has {} features, dataset has {}",
                self.min.len(),
                data.d()
            )));
        }
        let choice = data.candidate_choice();
        let transitions = data
            .transitions()
            .iter()
            .map(|t| {
                let state = self.normalize_state(&t.state);
                let action = match t.action {
                    Action::Continuous(v) => Action::Continuous(self.normalize_action(v)),
                    a => a,
                };
                let candidate = match choice {
                    CandidateChoice::Feature(i) => state[i],
                    CandidateChoice::Action => action.value(),
                    CandidateChoice::Column => self.normalize_candidate(t.candidate),
                };
                Transition {
                    next_state: self.normalize_state(&t.next_state),
                    state,
                    action,
                    candidate,
                    ..t.clone()
                }
            })
            .collect();
        Ok(data.with_transitions(transitions))
    }
}

/// Map every feature onto `[0, 1]`. Constant features map to 0.0 and are
/// reported with a warning.
pub fn normalize_features(data: &BatchDataset) -> Result<(BatchDataset, NormalizationSpec)> {
    let spec = NormalizationSpec::fit(data)?;
    for j in spec.degenerate_features() {
        log::warn!("feature {j} is constant ({}); normalized to 0.0", spec.min[j]);
    }
    Ok((spec.apply(data)?, spec))
}

/// Threshold continuous actions against a per-trajectory baseline:
/// `1` when strictly above the baseline, `0` otherwise.
pub fn binarize_actions(data: &BatchDataset, baseline: &HashMap<String, f64>) -> Result<BatchDataset> {
    if data.actions() != ActionSpace::Continuous {
        return Err(Error::InvalidArgument("binarization needs continuous actions".into()));
    }
    let transitions = data
        .transitions()
        .iter()
        .map(|t| {
            let base = *baseline
                .get(&t.trajectory_id)
                .ok_or_else(|| Error::MissingBaseline(t.trajectory_id.clone()))?;
            Ok(Transition {
                action: Action::Discrete(usize::from(t.action.value() > base)),
                ..t.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let candidate = match data.candidate_choice() {
        CandidateChoice::Action => CandidateChoice::Column,
        c => c,
    };
    BatchDataset::new(transitions, data.d(), ActionSpace::Discrete { k: 2 }, candidate)
}

/// Trajectory ids sorted and then shuffled by `seed`, so the order depends
/// only on the id set.
pub(crate) fn shuffled_ids(data: &BatchDataset, seed: u64) -> Vec<String> {
    let mut ids = data.trajectory_ids();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Partition whole trajectories into two datasets; the first receives
/// `ceil(fraction * n)` trajectories (at most `n - 1`).
pub fn split_patient_level(
    data: &BatchDataset,
    fraction: f64,
    seed: u64,
) -> Result<(BatchDataset, BatchDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} not in (0, 1)")));
    }
    let ids = shuffled_ids(data, seed);
    let n = ids.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 trajectories to split, got {n}")));
    }
    let first = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let train: HashSet<String> = ids[..first].iter().cloned().collect();
    let valid: HashSet<String> = ids[first..].iter().cloned().collect();
    Ok((data.subset(&train), data.subset(&valid)))
}

/// Re-derive the candidate value of every transition from `choice`.
pub fn candidate_view(data: &BatchDataset, choice: CandidateChoice) -> Result<BatchDataset> {
    let transitions = data
        .transitions()
        .iter()
        .map(|t| {
            let candidate = match choice {
                CandidateChoice::Feature(i) if i >= data.d() => {
                    return Err(Error::OutOfRange { index: i, len: data.d() })
                }
                CandidateChoice::Feature(i) => t.state[i],
                CandidateChoice::Action => match t.action {
                    Action::Continuous(v) => v,
                    Action::Discrete(_) => {
                        return Err(Error::InvalidArgument(
                            "the action can only be the candidate in continuous mode".into(),
                        ))
                    }
                },
                CandidateChoice::Column => t.candidate,
            };
            Ok(Transition { candidate, ..t.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    BatchDataset::new(transitions, data.d(), data.actions(), choice)
}

/// Count of transitions per trajectory, keyed by id.
pub fn trajectory_lengths(data: &BatchDataset) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for t in data.transitions() {
        *out.entry(t.trajectory_id.clone()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(d: usize) -> TrajectorySchema {
        TrajectorySchema::standard(d, CandidateSource::Feature(0), ActionKind::Discrete { k: Some(2) })
    }

    fn transition(id: &str, t: u64, s: Vec<f64>, a: Action) -> Transition {
        Transition {
            candidate: s[0],
            next_state: s.clone(),
            state: s,
            action: a,
            reward: 0.0,
            trajectory_id: id.into(),
            time_index: t,
        }
    }

    #[test]
    fn three_rows_pair_into_two_transitions() {
        let csv = "traj_id,t,s_0,action,reward\np1,0,0.1,0,-1\np1,1,0.2,1,-2\np1,2,0.3,0,-3\n";
        let data = ingest_trajectories(csv.as_bytes(), &schema(1)).unwrap();
        assert_eq!(data.len(), 2);
        let t = &data.transitions()[1];
        assert_eq!(t.state, vec![0.2]);
        assert_eq!(t.next_state, vec![0.3]);
        assert_eq!(t.action, Action::Discrete(1));
        assert_eq!(t.reward, -2.0);
    }

    #[test]
    fn missing_middle_row_breaks_the_chain() {
        let csv = "traj_id,t,s_0,action,reward\np1,0,0.1,0,-1\np1,1,0.2,1,NA\np1,2,0.3,0,-3\n";
        let err = ingest_trajectories(csv.as_bytes(), &schema(1)).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
        let csv = "traj_id,t,s_0,action,reward\np1,0,0.1,0,-1\np1,1,0.2,1,\np1,2,0.3,0,-3\np1,3,0.4,0,-3\n";
        let data = ingest_trajectories(csv.as_bytes(), &schema(1)).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data.transitions()[0].time_index, 2);
    }

    #[test]
    fn non_numeric_action_names_the_row() {
        let csv = "traj_id,t,s_0,action,reward\np1,0,0.1,0,-1\np1,1,0.2,abc,-2\n";
        let err = ingest_trajectories(csv.as_bytes(), &schema(1)).unwrap_err();
        match err {
            Error::Row { row, message } => {
                assert_eq!(row, 3);
                assert!(message.contains("abc"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_column_is_an_error() {
        let csv = "traj_id,t,s_0,action,reward\np1,0,0.1,0,-1\n";
        let err = ingest_trajectories(csv.as_bytes(), &schema(2)).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(c) if c == "s_1"));
    }

    #[test]
    fn rows_are_paired_after_sorting_by_time() {
        let csv = "traj_id,t,s_0,action,reward\na,1,0.2,1,-2\nb,0,0.5,0,0\na,0,0.1,0,-1\nb,1,0.6,1,0\n";
        let data = ingest_trajectories(csv.as_bytes(), &schema(1)).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.trajectory_ids(), vec!["a".to_string(), "b".to_string()]);
        assert_eq!(data.transitions()[0].state, vec![0.1]);
    }

    #[test]
    fn normalization_is_affine_and_invertible() {
        let ts = vec![
            transition("a", 0, vec![2.0, 5.0], Action::Discrete(0)),
            transition("a", 1, vec![4.0, 5.0], Action::Discrete(1)),
            transition("a", 2, vec![6.0, 5.0], Action::Discrete(0)),
        ];
        let data = BatchDataset::new(ts, 2, ActionSpace::Discrete { k: 2 }, CandidateChoice::Feature(0))
            .unwrap();
        let (norm, spec) = normalize_features(&data).unwrap();
        let col0: Vec<f64> = norm.transitions().iter().map(|t| t.state[0]).collect();
        assert_eq!(col0, vec![0.0, 0.5, 1.0]);
        assert!(norm.transitions().iter().all(|t| t.state[1] == 0.0));
        assert_eq!(spec.degenerate_features(), vec![1]);
        // candidate follows the normalized feature
        assert_eq!(norm.transitions()[1].candidate, 0.5);
        for v in [2.0, 3.3, 6.0] {
            assert!((spec.denormalize_feature(0, spec.normalize_feature(0, v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn binarization_rule_and_tie() {
        let mk = |v: f64| Transition {
            state: vec![0.0],
            action: Action::Continuous(v),
            reward: 0.0,
            next_state: vec![0.0],
            candidate: v,
            trajectory_id: "p".into(),
            time_index: v as u64,
        };
        let data = BatchDataset::new(
            vec![mk(300.0), mk(1000.0), mk(1200.0)],
            1,
            ActionSpace::Continuous,
            CandidateChoice::Feature(0),
        )
        .unwrap();
        let baseline = HashMap::from([("p".to_string(), 1000.0)]);
        let bin = binarize_actions(&data, &baseline).unwrap();
        let actions: Vec<_> = bin.transitions().iter().map(|t| t.action).collect();
        assert_eq!(actions, vec![Action::Discrete(0), Action::Discrete(0), Action::Discrete(1)]);
        assert_eq!(bin.actions(), ActionSpace::Discrete { k: 2 });
        let err = binarize_actions(&data, &HashMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingBaseline(id) if id == "p"));
    }

    fn ten_trajectories() -> BatchDataset {
        let ts = (0..10)
            .flat_map(|p| {
                (0..3).map(move |t| transition(&format!("p{p}"), t, vec![p as f64 + 0.1 * t as f64], Action::Discrete(0)))
            })
            .collect();
        BatchDataset::new(ts, 1, ActionSpace::Discrete { k: 2 }, CandidateChoice::Feature(0)).unwrap()
    }

    #[test]
    fn split_by_whole_trajectories() {
        let data = ten_trajectories();
        let (train, valid) = split_patient_level(&data, 0.8, 7).unwrap();
        assert_eq!(train.trajectory_ids().len(), 8);
        assert_eq!(valid.trajectory_ids().len(), 2);
        assert_eq!(train.len() + valid.len(), data.len());
        let a: HashSet<_> = train.trajectory_ids().into_iter().collect();
        assert!(valid.trajectory_ids().iter().all(|id| !a.contains(id)));
        let again = split_patient_level(&data, 0.8, 7).unwrap();
        assert_eq!(again.0, train);
        assert_eq!(again.1, valid);
    }

    #[test]
    fn split_needs_two_trajectories() {
        let data = BatchDataset::new(
            vec![transition("only", 0, vec![0.0], Action::Discrete(0))],
            1,
            ActionSpace::Discrete { k: 1 },
            CandidateChoice::Feature(0),
        )
        .unwrap();
        assert!(split_patient_level(&data, 0.5, 0).is_err());
        assert!(split_patient_level(&ten_trajectories(), 1.0, 0).is_err());
    }

    #[test]
    fn candidate_views() {
        let s = |v: f64| vec![v, 10.0 * v];
        let ts = vec![
            Transition { candidate: 0.0, ..transition("a", 0, s(0.1), Action::Continuous(3.0)) },
            Transition { candidate: 0.0, ..transition("a", 1, s(0.2), Action::Continuous(4.0)) },
        ];
        let data = BatchDataset::new(ts, 2, ActionSpace::Continuous, CandidateChoice::Column).unwrap();
        let by_feature = candidate_view(&data, CandidateChoice::Feature(1)).unwrap();
        assert_eq!(by_feature.transitions()[1].candidate, 2.0);
        assert_eq!(by_feature.candidate_choice().excluded_feature(), Some(1));
        let by_action = candidate_view(&data, CandidateChoice::Action).unwrap();
        assert_eq!(by_action.transitions()[0].candidate, 3.0);
        assert!(matches!(
            candidate_view(&data, CandidateChoice::Feature(2)),
            Err(Error::OutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn observed_next_actions_follow_time_index() {
        let ts = vec![
            transition("a", 0, vec![0.0], Action::Discrete(1)),
            transition("a", 1, vec![0.0], Action::Discrete(0)),
            transition("a", 3, vec![0.0], Action::Discrete(1)),
        ];
        let data = BatchDataset::new(ts, 1, ActionSpace::Discrete { k: 2 }, CandidateChoice::Feature(0)).unwrap();
        assert_eq!(
            data.observed_next_actions(),
            vec![Some(Action::Discrete(0)), None, None]
        );
    }

    #[test]
    fn rejects_out_of_order_time_index() {
        let ts = vec![
            transition("a", 1, vec![0.0], Action::Discrete(0)),
            transition("a", 0, vec![0.0], Action::Discrete(0)),
        ];
        assert!(BatchDataset::new(ts, 1, ActionSpace::Discrete { k: 2 }, CandidateChoice::Feature(0)).is_err());
    }
}
