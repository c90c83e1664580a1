//! Use a continuous action as the candidate variable: each local model is
//! the value of one dose level, and the greedy dose maximizes over the grid.
//!
//! ```text
//! cargo run --release --example continuous_action
//! ```

use std::fmt::Write as _;

use kshrl::data::{ingest_trajectories, normalize_features, ActionKind, CandidateSource, TrajectorySchema};
use kshrl::policy::greedy_action_continuous;
use kshrl::solver::{even_grid, fit_local_grid};
use kshrl::{BasisSpec, FeatureMap, FitMethod, KernelSpec, NextAction, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn best_dose(s0: f64) -> f64 {
    0.2 + 0.6 * s0
}

fn main() -> kshrl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut text = String::from("traj_id,t,s_0,s_1,action,reward\n");
    for i in 0..200 {
        for t in 0..5 {
            let s = [rng.gen::<f64>(), rng.gen::<f64>()];
            let dose: f64 = rng.gen();
            let reward = -4.0 * (dose - best_dose(s[0])).powi(2) + 0.5 * s[1] + 0.05 * rng.gen::<f64>();
            writeln!(text, "{i},{t},{},{},{dose},{reward}", s[0], s[1]).unwrap();
        }
    }
    let schema = TrajectorySchema::standard(2, CandidateSource::Action, ActionKind::Continuous);
    let (data, norm) = normalize_features(&ingest_trajectories(text.as_bytes(), &schema)?)?;

    let features = FeatureMap::fit(BasisSpec::bspline(5, 3)?, &data)?;
    let grid = fit_local_grid(
        &data,
        &features,
        &KernelSpec::gaussian(0.05)?,
        &even_grid(21),
        0.0,
        &SolverConfig::default(),
        FitMethod::Analytic,
        NextAction::Observed,
    )?;

    println!("{:>6} {:>10} {:>10}", "s_0", "greedy", "best");
    for s0 in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let s = norm.normalize_state(&[s0, 0.5]);
        let dose = norm.denormalize_action(greedy_action_continuous(&grid, &s)?);
        println!("{s0:>6.2} {dose:>10.3} {:>10.3}", best_dose(s0));
    }
    Ok(())
}
