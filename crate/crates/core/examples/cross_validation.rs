//! Choose basis size, bandwidth and penalty by trajectory-level k-fold
//! cross-validation.
//!
//! ```text
//! cargo run --release --example cross_validation
//! ```

use kshrl::basis::BasisFamily;
use kshrl::modelsel::{grid_search, FitSettings, HyperGrid, Loss};
use kshrl::sim::{sample_trajectories, SimConfig};
use kshrl::{CandidateChoice, FitMethod, KernelFamily};

fn main() -> kshrl::Result<()> {
    let batch = sample_trajectories(&SimConfig { d: 4, seed: 7, ..Default::default() }, 80, 10)?;
    let data = batch.to_dataset(CandidateChoice::Feature(0))?;

    let grid = HyperGrid {
        family: vec![BasisFamily::Bspline],
        m: vec![4, 6],
        degree: vec![3],
        kernel: vec![KernelFamily::Gaussian],
        bandwidth: vec![0.1, 0.3],
        lambda: vec![0.0, 1.0],
        mu: vec![None],
        gamma: vec![0.0],
        grid_size: vec![11],
        ridge: vec![1e-8],
    };
    let settings = FitSettings { method: FitMethod::CoordinateDescent, loss: Loss::ValidationMse, ..Default::default() };
    let result = grid_search(&data, &grid, 5, &settings, 7)?;

    println!("{:>3} {:>5} {:>6} {:>12}", "m", "h", "lambda", "mean loss");
    for ((h, loss), err) in result.combinations.iter().zip(&result.mean_loss).zip(&result.errors) {
        println!("{:>3} {:>5} {:>6} {:>12.5} {}", h.m, h.bandwidth, h.lambda, loss, err.as_deref().unwrap_or(""));
    }
    if let Some(best) = result.best_params() {
        println!("\nbest: m = {}, h = {}, lambda = {}", best.m, best.bandwidth, best.lambda);
    }
    Ok(())
}
