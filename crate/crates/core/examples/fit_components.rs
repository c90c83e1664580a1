//! Fit a grid of local models along `s_1` and read off the marginal and
//! joint components.
//!
//! ```text
//! cargo run --release --example fit_components
//! ```

use kshrl::data::normalize_features;
use kshrl::sim::{sample_trajectories, SimConfig};
use kshrl::solver::{even_grid, extract_components, fit_local_grid, Component};
use kshrl::{BasisSpec, CandidateChoice, FeatureMap, FitMethod, KernelSpec, NextAction, SolverConfig};

fn main() -> kshrl::Result<()> {
    let batch = sample_trajectories(&SimConfig { d: 5, seed: 3, ..Default::default() }, 100, 10)?;
    let (data, norm) = normalize_features(&batch.to_dataset(CandidateChoice::Feature(0))?)?;

    let features = FeatureMap::fit(BasisSpec::bspline(5, 3)?, &data)?;
    let kernel = KernelSpec::gaussian(0.1)?;
    let zs = even_grid(11);
    let grid = fit_local_grid(
        &data,
        &features,
        &kernel,
        &zs,
        0.5,
        &SolverConfig::default(),
        FitMethod::Analytic,
        NextAction::Observed,
    )?;
    println!("{} local models with {} coefficients each", grid.len(), grid.layout().p());

    println!("\nmarginal (intercept) along s_1, data units");
    println!("{:>7} {:>9} {:>9}", "s_1", "a=0", "a=1");
    let m0 = extract_components(&grid, &Component::Marginal, 0)?;
    let m1 = extract_components(&grid, &Component::Marginal, 1)?;
    for (p0, p1) in m0.iter().zip(&m1) {
        println!("{:>7.3} {:>9.3} {:>9.3}", norm.denormalize_feature(0, p0.z), p0.value, p1.value);
    }

    let points = vec![0.0, 0.25, 0.5, 0.75, 1.0];
    let joint = extract_components(&grid, &Component::Joint { feature: 1, points: points.clone() }, 0)?;
    println!("\njoint component of s_2 for a=0 (rows: s_1, columns: s_2)");
    print!("{:>7}", "");
    for s in &points {
        print!(" {:>7.2}", norm.denormalize_feature(1, *s));
    }
    println!();
    for row in joint.chunks(points.len()) {
        print!("{:>7.3}", norm.denormalize_feature(0, row[0].z));
        for p in row {
            print!(" {:>7.3}", p.value);
        }
        println!();
    }
    Ok(())
}
