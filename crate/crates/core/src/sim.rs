//! Benchmark MDP with two binary actions, Monte-Carlo value oracles and a
//! regret harness.
//!
//! Transitions follow `s' = (-1)^a (sin(x + a u) + 0.1 s^2) + eps` componentwise
//! with fresh `x ~ U(0, 2)^d`, `u ~ U(0, 1)^d` and `eps ~ N(0, sigma^2 I)`. The
//! reward only depends on the first two features.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Action, ActionSpace, BatchDataset, CandidateChoice, Transition};
use crate::error::{Error, Result};
use crate::policy::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub d: usize,
    /// Standard deviation of the additive transition noise.
    pub sigma: f64,
    /// Off-diagonal entry of the symmetric matrix that mixes the next state;
    /// 0 leaves features independent.
    pub correlation: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { d: 5, sigma: 0.1, correlation: 0.0, seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidArgument(format!("state dimension must be at least 2, got {}", self.d)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::InvalidArgument(format!("correlation {} not in [0, 1)", self.correlation)));
        }
        Ok(())
    }
}

/// Independent random stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// The random inputs of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDraws {
    /// `x ~ U(0, 2)^d`.
    pub transition_shift: Vec<f64>,
    /// `u ~ U(0, 1)^d`.
    pub u: Vec<f64>,
    pub noise: Vec<f64>,
}

impl TransitionDraws {
    pub fn sample<R: Rng>(config: &SimConfig, rng: &mut R) -> Self {
        let d = config.d;
        let transition_shift = (0..d).map(|_| rng.gen_range(0.0..2.0)).collect();
        let u = (0..d).map(|_| rng.gen::<f64>()).collect();
        let noise = if config.sigma > 0.0 {
            let normal = Normal::new(0.0, config.sigma).expect("sigma validated");
            (0..d).map(|_| normal.sample(rng)).collect()
        } else {
            vec![0.0; d]
        };
        Self { transition_shift, u, noise }
    }
}

/// Apply the transition formula to fixed draws.
pub fn transition_with(config: &SimConfig, s: &[f64], a: usize, draws: &TransitionDraws) -> Vec<f64> {
    let sign = if a == 1 { -1.0 } else { 1.0 };
    let af = a as f64;
    let raw: Vec<f64> = (0..s.len())
        .map(|j| {
            sign * ((draws.transition_shift[j] + af * draws.u[j]).sin() + 0.1 * s[j] * s[j]) + draws.noise[j]
        })
        .collect();
    if config.correlation == 0.0 {
        return raw;
    }
    let rho = config.correlation;
    let total: f64 = raw.iter().sum();
    let scale = 1.0 + rho * (raw.len() as f64 - 1.0);
    raw.iter().map(|&v| ((1.0 - rho) * v + rho * total) / scale).collect()
}

pub fn transition<R: Rng>(config: &SimConfig, s: &[f64], a: usize, rng: &mut R) -> Vec<f64> {
    let draws = TransitionDraws::sample(config, rng);
    transition_with(config, s, a, &draws)
}

/// `(u1(s_1, a), u2(s_2, a))`.
pub fn reward_components(s: &[f64], a: usize) -> [f64; 2] {
    let (s1, s2) = (s[0], s[1]);
    if a == 1 {
        [5.0 * s1 * s1 + 5.0, 5.0 * (s2 * s2).sin() + 5.0]
    } else {
        [-(2.0 * s1 * s1 * s1 - 5.0), 4.0 * s2 - 5.0]
    }
}

pub fn reward(s: &[f64], a: usize) -> f64 {
    let [u1, u2] = reward_components(s, a);
    u1 + u2
}

/// Action with the larger immediate reward; ties go to 0.
pub fn oracle_action(s: &[f64]) -> usize {
    usize::from(reward(s, 1) > reward(s, 0))
}

pub fn initial_state<R: Rng>(config: &SimConfig, rng: &mut R) -> Vec<f64> {
    (0..config.d).map(|_| rng.gen::<f64>()).collect()
}

/// Who picks the action during a rollout.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    /// Fair coin; also the data-generating policy of the benchmark.
    UniformRandom,
    /// Maximizes the immediate reward at every step.
    PerStepOracle,
    /// A fitted policy; `candidate` names the state feature passed as its candidate value.
    Policy { policy: &'a dyn Policy, candidate: Option<usize> },
}

impl Controller<'_> {
    pub fn choose<R: Rng>(&self, s: &[f64], rng: &mut R) -> Result<usize> {
        match *self {
            Controller::UniformRandom => Ok(usize::from(rng.gen::<bool>())),
            Controller::PerStepOracle => Ok(oracle_action(s)),
            Controller::Policy { policy, candidate } => {
                let x = candidate.map_or(f64::NAN, |j| s[j]);
                match policy.action(s, x)? {
                    Action::Discrete(a) if a < 2 => Ok(a),
                    other => Err(Error::InvalidArgument(format!("benchmark actions are 0 or 1, policy chose {other:?}"))),
                }
            }
        }
    }
}

/// One trajectory: `states[t]`, `actions[t]`, `rewards[t]` for `t < ell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBatch {
    pub d: usize,
    pub trajectories: Vec<Episode>,
}

fn episode_id(i: usize) -> String {
    format!("ep{i:05}")
}

impl EpisodeBatch {
    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// Consecutive steps paired into transitions (`ell - 1` per trajectory).
    pub fn to_dataset(&self, candidate: CandidateChoice) -> Result<BatchDataset> {
        let mut out = Vec::new();
        for (i, ep) in self.trajectories.iter().enumerate() {
            for t in 0..ep.states.len().saturating_sub(1) {
                let state = ep.states[t].clone();
                out.push(Transition {
                    candidate: match candidate {
                        CandidateChoice::Feature(j) if j < self.d => state[j],
                        CandidateChoice::Feature(j) => return Err(Error::OutOfRange { index: j, len: self.d }),
                        _ => {
                            return Err(Error::InvalidArgument(
                                "simulated data only supports a state feature as candidate".into(),
                            ))
                        }
                    },
                    state,
                    action: Action::Discrete(ep.actions[t]),
                    reward: ep.rewards[t],
                    next_state: ep.states[t + 1].clone(),
                    trajectory_id: episode_id(i),
                    time_index: t as u64,
                });
            }
        }
        BatchDataset::new(out, self.d, ActionSpace::Discrete { k: 2 }, candidate)
    }

    /// Rows `traj_id, t, s_0..s_{d-1}, action, reward`, one per step.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["traj_id".to_string(), "t".to_string()];
        header.extend((0..self.d).map(|j| format!("s_{j}")));
        header.extend(["action".to_string(), "reward".to_string()]);
        w.write_record(&header)?;
        for (i, ep) in self.trajectories.iter().enumerate() {
            for t in 0..ep.states.len() {
                let mut row = vec![episode_id(i), t.to_string()];
                row.extend(ep.states[t].iter().map(|v| v.to_string()));
                row.push(ep.actions[t].to_string());
                row.push(ep.rewards[t].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::Io { path: "csv output".into(), source: e })?;
        Ok(())
    }
}

fn run_episode<R: Rng>(config: &SimConfig, ell: usize, controller: Controller<'_>, rng: &mut R) -> Result<Episode> {
    let mut s = initial_state(config, rng);
    let mut ep = Episode { states: Vec::with_capacity(ell), actions: Vec::with_capacity(ell), rewards: Vec::with_capacity(ell) };
    for step in 0..ell {
        let a = controller.choose(&s, rng)?;
        ep.rewards.push(reward(&s, a));
        ep.actions.push(a);
        let next = (step + 1 < ell).then(|| transition(config, &s, a, rng));
        ep.states.push(std::mem::take(&mut s));
        if let Some(next) = next {
            s = next;
        }
    }
    Ok(ep)
}

/// `n` trajectories of length `ell` under the uniform random behavior policy.
pub fn sample_trajectories(config: &SimConfig, n: usize, ell: usize) -> Result<EpisodeBatch> {
    sample_with(config, n, ell, Controller::UniformRandom)
}

/// `n` trajectories of length `ell` under an arbitrary controller.
pub fn sample_with(config: &SimConfig, n: usize, ell: usize, controller: Controller<'_>) -> Result<EpisodeBatch> {
    config.validate()?;
    if n == 0 || ell == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory of at least one step".into()));
    }
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| run_episode(config, ell, controller, &mut stream(config.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpisodeBatch { d: config.d, trajectories })
}

/// Where the discount exponent starts in a Monte-Carlo return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ReturnIndexing {
    /// `sum_{j=0}^{ell-1} gamma^j r_j`: the immediate reward is undiscounted.
    #[default]
    FromZero,
    /// `sum_{j=1}^{ell} gamma^j r_j`.
    FromOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub gamma: f64,
    pub n_rollouts: usize,
    pub ell: usize,
    pub seed: u64,
    pub indexing: ReturnIndexing,
}

impl McSettings {
    pub fn new(gamma: f64, n_rollouts: usize, ell: usize, seed: u64) -> Self {
        Self { gamma, n_rollouts, ell, seed, indexing: ReturnIndexing::FromZero }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount factor {} not in [0, 1)", self.gamma)));
        }
        if self.n_rollouts == 0 || self.ell == 0 {
            return Err(Error::InvalidArgument("need at least one rollout of at least one step".into()));
        }
        Ok(())
    }

    fn discount(&self, j: usize) -> f64 {
        match self.indexing {
            ReturnIndexing::FromZero => self.gamma.powi(j as i32),
            ReturnIndexing::FromOne => self.gamma.powi(j as i32 + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// `gamma^ell r_max / (1 - gamma)` with `r_max` the largest reward magnitude seen.
    pub truncation_bound: f64,
}

/// What a rollout accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Accumulate {
    Total,
    Component(usize),
}

fn rollout<R: Rng>(
    config: &SimConfig,
    s0: Vec<f64>,
    a0: usize,
    controller: Controller<'_>,
    mc: &McSettings,
    what: Accumulate,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut s = s0;
    let mut a = a0;
    let mut total = 0.0;
    let mut r_max = 0.0f64;
    for j in 0..mc.ell {
        let r = match what {
            Accumulate::Total => reward(&s, a),
            Accumulate::Component(i) => reward_components(&s, a)[i],
        };
        r_max = r_max.max(reward(&s, 0).abs()).max(reward(&s, 1).abs());
        total += mc.discount(j) * r;
        if j + 1 < mc.ell {
            s = transition(config, &s, a, rng);
            a = controller.choose(&s, rng)?;
        }
    }
    Ok((total, r_max))
}

fn summarize(samples: &[(f64, f64)], mc: &McSettings) -> McEstimate {
    let n = samples.len() as f64;
    // shifted by the first sample so identical samples average exactly
    let first = samples[0].0;
    let mean = first + samples.iter().map(|s| s.0 - first).sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let r_max = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        truncation_bound: mc.gamma.powi(mc.ell as i32) * r_max / (1.0 - mc.gamma),
    }
}

/// Average discounted return from `(s, a)` then following `controller`.
pub fn mc_q_estimate(
    config: &SimConfig,
    s: &[f64],
    a: usize,
    controller: Controller<'_>,
    mc: &McSettings,
) -> Result<McEstimate> {
    config.validate()?;
    mc.validate()?;
    if s.len() != config.d || a > 1 {
        return Err(Error::InvalidArgument(format!("need a state of length {} and action 0 or 1", config.d)));
    }
    let samples = (0..mc.n_rollouts)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(mc.seed, k as u64);
            rollout(config, s.to_vec(), a, controller, mc, Accumulate::Total, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&samples, mc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimate {
    pub value: f64,
    pub estimate: McEstimate,
}

/// Discounted return of reward component `i` (0 for `u1`, 1 for `u2`) with
/// feature `i` pinned at each grid value and the other features drawn from
/// the initial distribution.
pub fn mc_component_estimate(
    config: &SimConfig,
    i: usize,
    values: &[f64],
    a: usize,
    controller: Controller<'_>,
    mc: &McSettings,
) -> Result<Vec<ComponentEstimate>> {
    config.validate()?;
    mc.validate()?;
    if i > 1 || a > 1 {
        return Err(Error::InvalidArgument("component must be 0 or 1 and action 0 or 1".into()));
    }
    values
        .iter()
        .enumerate()
        .map(|(g, &v)| {
            let samples = (0..mc.n_rollouts)
                .into_par_iter()
                .map(|k| {
                    let mut rng = stream(mc.seed ^ ((g as u64) << 32), k as u64);
                    let mut s = initial_state(config, &mut rng);
                    s[i] = v;
                    rollout(config, s, a, controller, mc, Accumulate::Component(i), &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ComponentEstimate { value: v, estimate: summarize(&samples, mc) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRegret {
    pub episode: usize,
    pub achieved: f64,
    pub oracle: f64,
    /// Mean per-step `oracle - achieved` in this episode.
    pub mean_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Mean over all steps of all episodes.
    pub mean_regret: f64,
    pub episodes: Vec<EpisodeRegret>,
}

impl RegretReport {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["episode", "achieved", "oracle", "mean_regret"])?;
        for e in &self.episodes {
            w.write_record([
                e.episode.to_string(),
                e.achieved.to_string(),
                e.oracle.to_string(),
                e.mean_regret.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io { path: "csv output".into(), source: e })?;
        Ok(())
    }
}

/// Roll `controller` out for `n_episodes` episodes of `ell` steps and compare
/// each reward with the best immediate reward at that state.
pub fn regret_analysis(
    config: &SimConfig,
    controller: Controller<'_>,
    n_episodes: usize,
    ell: usize,
    seed: u64,
) -> Result<RegretReport> {
    config.validate()?;
    if n_episodes == 0 || ell == 0 {
        return Err(Error::InvalidArgument("need at least one episode of at least one step".into()));
    }
    let episodes = (0..n_episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = stream(seed, e as u64);
            let ep = run_episode(config, ell, controller, &mut rng)?;
            let oracle: f64 = ep.states.iter().map(|s| reward(s, oracle_action(s))).sum();
            let achieved: f64 = ep.rewards.iter().sum();
            let gaps: f64 = ep
                .states
                .iter()
                .zip(&ep.rewards)
                .map(|(s, r)| reward(s, oracle_action(s)) - r)
                .sum();
            Ok(EpisodeRegret { episode: e, achieved, oracle, mean_regret: gaps / ell as f64 })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_regret = episodes.iter().map(|e| e.mean_regret).sum::<f64>() / n_episodes as f64;
    Ok(RegretReport { mean_regret, episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn cfg(d: usize, sigma: f64) -> SimConfig {
        SimConfig { d, sigma, correlation: 0.0, seed: 7 }
    }

    #[test]
    fn stubbed_transitions() {
        let c = cfg(3, 0.0);
        let draws = TransitionDraws { transition_shift: vec![FRAC_PI_2; 3], u: vec![0.4, 0.1, 0.9], noise: vec![0.0; 3] };
        assert_eq!(transition_with(&c, &[0.0; 3], 0, &draws), vec![1.0; 3]);
        let draws = TransitionDraws { u: vec![0.0; 3], ..draws };
        assert_eq!(transition_with(&c, &[0.0; 3], 1, &draws), vec![-1.0; 3]);
    }

    #[test]
    fn rewards_by_hand() {
        assert_eq!(reward(&[0.0, 0.0, 0.3], 1), 10.0);
        assert_eq!(reward(&[1.0, 1.0, 0.3], 0), 2.0);
        assert_eq!(reward(&[0.5, 0.5, 0.1], 1), reward(&[0.5, 0.5, 0.9], 1));
    }

    #[test]
    fn transition_is_bounded_without_noise() {
        let c = cfg(4, 0.0);
        let mut rng = stream(1, 0);
        for _ in 0..1000 {
            let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = rng.gen_range(0..2);
            let next = transition(&c, &s, a, &mut rng);
            for (n, v) in next.iter().zip(&s) {
                assert!(n.abs() <= 1.0 + 0.1 * v * v);
            }
        }
    }

    #[test]
    fn sampling_shape_and_determinism() {
        let c = cfg(5, 0.1);
        let batch = sample_trajectories(&c, 100, 10).unwrap();
        assert_eq!(batch.n(), 100);
        assert!(batch.trajectories.iter().all(|e| e.states.len() == 10 && e.rewards.len() == 10));
        assert!(batch.trajectories.iter().all(|e| e.states[0].iter().all(|v| (0.0..=1.0).contains(v))));
        let data = batch.to_dataset(CandidateChoice::Feature(0)).unwrap();
        assert_eq!(data.len(), 900);
        assert_eq!(sample_trajectories(&c, 100, 10).unwrap(), batch);
    }

    #[test]
    fn behavior_coin_is_fair() {
        let batch = sample_trajectories(&cfg(2, 0.1), 1000, 10).unwrap();
        let ones: usize = batch.trajectories.iter().flat_map(|e| &e.actions).sum();
        let freq = ones as f64 / 1e4;
        assert!((freq - 0.5).abs() < 0.05, "{freq}");
    }

    #[test]
    fn mc_geometric_and_gamma_zero() {
        let c = cfg(3, 0.2);
        let s = [0.3, 0.8, 0.5];
        let mc = McSettings::new(0.0, 50, 5, 3);
        let est = mc_q_estimate(&c, &s, 1, Controller::UniformRandom, &mc).unwrap();
        assert_eq!(est.mean, reward(&s, 1));
        let lit = McSettings { indexing: ReturnIndexing::FromOne, ..mc };
        assert_eq!(mc_q_estimate(&c, &s, 1, Controller::UniformRandom, &lit).unwrap().mean, 0.0);
    }

    #[test]
    fn component_collapse_at_gamma_zero() {
        let c = cfg(4, 0.1);
        let mc = McSettings::new(0.0, 20, 4, 9);
        let u1 = mc_component_estimate(&c, 0, &[1.0], 1, Controller::UniformRandom, &mc).unwrap();
        assert_eq!(u1[0].estimate.mean, 10.0);
        let u2 = mc_component_estimate(&c, 1, &[0.0], 0, Controller::UniformRandom, &mc).unwrap();
        assert_eq!(u2[0].estimate.mean, -5.0);
    }

    #[test]
    fn oracle_has_zero_regret_and_others_nonnegative() {
        let c = cfg(5, 0.1);
        let oracle = regret_analysis(&c, Controller::PerStepOracle, 200, 10, 4).unwrap();
        assert_eq!(oracle.mean_regret, 0.0);
        let random = regret_analysis(&c, Controller::UniformRandom, 200, 10, 4).unwrap();
        assert!(random.mean_regret > 0.0);
        assert!(random.episodes.iter().all(|e| e.mean_regret >= 0.0));
    }

    #[test]
    fn correlated_variant_mixes() {
        let c = SimConfig { correlation: 0.5, ..cfg(3, 0.0) };
        let draws = TransitionDraws { transition_shift: vec![FRAC_PI_2, 0.0, 0.0], u: vec![0.0; 3], noise: vec![0.0; 3] };
        let next = transition_with(&c, &[0.0; 3], 0, &draws);
        assert!(next.iter().all(|&v| v > 0.0));
        assert!(SimConfig { correlation: 1.0, ..c }.validate().is_err());
    }

    #[test]
    fn csv_export_reads_back() {
        let batch = sample_trajectories(&cfg(2, 0.1), 3, 4).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 13);
        let schema = crate::data::TrajectorySchema::standard(
            2,
            crate::data::CandidateSource::Feature(0),
            crate::data::ActionKind::Discrete { k: Some(2) },
        );
        let data = crate::data::ingest_trajectories(text.as_bytes(), &schema).unwrap();
        let direct = batch.to_dataset(CandidateChoice::Feature(0)).unwrap();
        assert_eq!(data.transitions(), direct.transitions());
    }
}
