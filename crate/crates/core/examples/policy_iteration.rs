//! Learn a greedy policy by approximate policy iteration and compare its
//! regret with random play and the per-step oracle.
//!
//! ```text
//! cargo run --release --example policy_iteration -- [candidate feature, 0-based]
//! ```

use kshrl::data::normalize_features;
use kshrl::policy::{ksh_lspi, InitialPolicy, NormalizedPolicy, OwnedGreedyPolicy, PolicyIterationConfig};
use kshrl::sim::{regret_analysis, sample_trajectories, Controller, SimConfig};
use kshrl::solver::even_grid;
use kshrl::{BasisSpec, CandidateChoice, FeatureMap, KernelSpec, SolverConfig};

fn main() -> kshrl::Result<()> {
    let c: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = SimConfig { d: 5, seed: 1, ..Default::default() };
    let batch = sample_trajectories(&config, 100, 10)?;
    let (data, spec) = normalize_features(&batch.to_dataset(CandidateChoice::Feature(c))?)?;

    let features = FeatureMap::fit(BasisSpec::bspline(2, 1)?, &data)?;
    let (grid, diagnostics) = ksh_lspi(
        &data,
        &features,
        &KernelSpec::gaussian(0.1)?,
        &even_grid(11),
        0.5,
        &SolverConfig { seed: 1, ..Default::default() },
        &PolicyIterationConfig::default(),
        InitialPolicy::Behavioral,
    )?;
    for r in &diagnostics.iterations {
        println!(
            "iteration {}: |B - B_prev|_F = {:.4}, {} passes, converged: {}",
            r.iteration, r.frobenius_delta, r.total_passes, r.all_converged
        );
    }
    println!("stopped: {:?}", diagnostics.stop);

    let policy = NormalizedPolicy { inner: OwnedGreedyPolicy(grid), spec, candidate: CandidateChoice::Feature(c) };
    let eval_seed = 1_001;
    let learned = regret_analysis(&config, Controller::Policy { policy: &policy, candidate: Some(c) }, 1000, 10, eval_seed)?;
    let random = regret_analysis(&config, Controller::UniformRandom, 1000, 10, eval_seed)?;
    let oracle = regret_analysis(&config, Controller::PerStepOracle, 1000, 10, eval_seed)?;
    println!("\nmean per-step regret over 1000 episodes");
    println!("  policy (candidate s_{}): {:.4}", c + 1, learned.mean_regret);
    println!("  random:                {:.4}", random.mean_regret);
    println!("  oracle:                {:.4}", oracle.mean_regret);
    Ok(())
}
