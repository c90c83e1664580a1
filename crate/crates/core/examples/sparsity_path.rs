//! Trace how the group penalty switches feature groups off along a lambda
//! path, fitting by coordinate descent with warm starts.
//!
//! ```text
//! cargo run --release --example sparsity_path
//! ```

use kshrl::basis::{build_design, GroupKind};
use kshrl::data::normalize_features;
use kshrl::kernel::weight_vector;
use kshrl::sim::{sample_trajectories, SimConfig};
use kshrl::solver::{assemble_system, even_grid, fit_grid_on_design, lambda_max};
use kshrl::{BasisSpec, CandidateChoice, FeatureMap, FitMethod, KernelSpec, NextAction, SolverConfig};

fn main() -> kshrl::Result<()> {
    let d = 5;
    let batch = sample_trajectories(&SimConfig { d, seed: 0, ..Default::default() }, 100, 10)?;
    let (data, _) = normalize_features(&batch.to_dataset(CandidateChoice::Feature(0))?)?;
    let features = FeatureMap::fit(BasisSpec::bspline(5, 3)?, &data)?;
    let design = build_design(&features, &data, NextAction::Observed)?;
    let kernel = KernelSpec::gaussian(0.1)?;
    let zs = even_grid(11);
    let gamma = 0.0;

    let lmax = zs
        .iter()
        .map(|&z| {
            let kw = weight_vector(&kernel, &design.candidates, z)?;
            Ok(lambda_max(&assemble_system(&design, &kw.weights, &design.rewards, gamma)?, &design.layout))
        })
        .collect::<kshrl::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!("lambda_max = {lmax:.4}");
    println!("share of local models in which each feature is active:");
    print!("{:>10}", "lambda");
    for j in 1..d {
        print!(" {:>6}", format!("s_{}", j + 1));
    }
    println!(" {:>7}", "passes");

    let mut warm: Option<Vec<Vec<f64>>> = None;
    for frac in [1.0, 0.3, 0.1, 0.03, 0.01, 0.003] {
        let config = SolverConfig { lambda: lmax * frac, ..Default::default() };
        let grid = fit_grid_on_design(
            &design,
            &features,
            &kernel,
            &zs,
            gamma,
            &config,
            FitMethod::CoordinateDescent,
            warm.as_deref(),
        )?;
        print!("{:>10.4}", config.lambda);
        for j in 1..d {
            let active = grid
                .models
                .iter()
                .filter(|m| {
                    (0..2).any(|a| {
                        let g = design.layout.group(a, GroupKind::Feature(j)).unwrap();
                        m.beta[g.range].iter().any(|&v| v != 0.0)
                    })
                })
                .count();
            print!(" {:>6.2}", active as f64 / zs.len() as f64);
        }
        let passes: usize = grid.models.iter().map(|m| m.diagnostics.passes).sum();
        println!(" {passes:>7}");
        warm = Some(grid.coefficients());
    }
    Ok(())
}
