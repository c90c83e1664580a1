//! Save a fitted grid as a model file, load it back, act with it on raw
//! states and export a component table.
//!
//! ```text
//! cargo run --release --example model_file -- [path]
//! ```

use kshrl::cli::config::Mode;
use kshrl::cli::model::ModelFile;
use kshrl::data::normalize_features;
use kshrl::sim::{sample_trajectories, SimConfig};
use kshrl::solver::{even_grid, extract_components, fit_local_grid, Component};
use kshrl::{BasisSpec, CandidateChoice, FeatureMap, FitMethod, KernelSpec, NextAction, Policy, SolverConfig};

fn main() -> kshrl::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("kshrl-example-model.json"));

    let batch = sample_trajectories(&SimConfig { d: 3, seed: 2, ..Default::default() }, 60, 8)?;
    let (data, norm) = normalize_features(&batch.to_dataset(CandidateChoice::Feature(0))?)?;
    let features = FeatureMap::fit(BasisSpec::bspline(4, 3)?, &data)?;
    let grid = fit_local_grid(
        &data,
        &features,
        &KernelSpec::gaussian(0.2)?,
        &even_grid(9),
        0.5,
        &SolverConfig::default(),
        FitMethod::Analytic,
        NextAction::Observed,
    )?;

    let model = ModelFile::new(&grid, norm, Mode::Discrete, CandidateChoice::Feature(0));
    model.write(&path)?;
    let loaded = ModelFile::read(&path)?;
    let same = loaded.to_json()? == std::fs::read_to_string(&path).map_err(|e| kshrl::Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    println!("wrote {} ({} local models); re-serialized identically: {same}", path.display(), loaded.zs.len());

    let policy = loaded.policy()?;
    for s in [[0.1, 0.5, 0.5], [0.9, 0.5, 0.5]] {
        println!("action at {s:?}: {:?}", policy.action(&s, f64::NAN)?);
    }

    let grid = loaded.grid()?;
    println!("\nz,value (a=1 marginal, data units)");
    for p in extract_components(&grid, &Component::Marginal, 1)? {
        println!("{:.4},{:.4}", loaded.normalization.candidate_to_raw(loaded.candidate, p.z), p.value);
    }
    Ok(())
}
