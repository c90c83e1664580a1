//! Command-line orchestration: configuration, pipeline wiring, model
//! persistence and plot-data export.
//!
//! Each command reads a [`RunConfig`], writes CSV tables and line-delimited
//! JSON diagnostics into the output directory, and maps errors onto exit
//! codes (2 for user or configuration errors, 3 for numerical failures).

pub mod config;
pub mod model;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::basis::{FeatureMap, NextAction};
use crate::data::{ingest_trajectories, normalize_features, BatchDataset, CandidateChoice, NormalizationSpec, TrajectorySchema};
use crate::error::{Error, Result};
use crate::modelsel::{grid_search, FitSettings};
use crate::policy::{ksh_lspi, InitialPolicy, OwnedGreedyPolicy, PolicyIterationDiagnostics, PolicyIterationStop};
use crate::sim::{regret_analysis, sample_trajectories, Controller, RegretReport};
use crate::solver::{even_grid, extract_components, fit_local_grid, Component, FitMethod, LocalModelGrid};

pub use config::{DataSource, Mode, RunConfig};
pub use model::ModelFile;

/// Seed offset separating evaluation rollouts from the training episodes.
const EVAL_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Parser)]
#[command(name = "kshrl", version, about = "Kernel-weighted sparse additive Q-function estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit a grid of local models under the behavior policy.
    Fit,
    /// Approximate policy iteration from the behavior policy or a saved model.
    PolicyIterate,
    /// Write simulated trajectories.
    Simulate,
    /// Compare a greedy policy against random, behavior and oracle baselines.
    Regret,
    /// Trajectory-level k-fold cross-validation over a hyperparameter grid.
    Cv,
    /// Tabulate marginal or joint components of a saved model.
    ExportComponents,
}

/// Parse arguments, run the command, report errors on stderr and return
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute(cli.command, &config))
}

pub fn execute(command: Command, config: &RunConfig) -> Result<()> {
    create_dir(&config.out)?;
    match command {
        Command::Fit => cmd_fit(config),
        Command::PolicyIterate => cmd_policy_iterate(config),
        Command::Simulate => cmd_simulate(config),
        Command::Regret => cmd_regret(config),
        Command::Cv => cmd_cv(config),
        Command::ExportComponents => cmd_export_components(config),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), source: e }
}

fn write_jsonl(path: &Path, records: &[serde_json::Value]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        writeln!(w, "{r}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// The configured dataset in data units.
pub fn load_data(config: &RunConfig) -> Result<BatchDataset> {
    match config.data.source {
        DataSource::Sim => {
            let s = &config.data.sim;
            let batch = sample_trajectories(&config.sim_config()?, s.n, s.ell)?;
            batch.to_dataset(config.candidate_choice())
        }
        DataSource::Csv => {
            let path = config.data.path.as_deref().ok_or_else(|| Error::Config("data.path is required".into()))?;
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let header = csv::Reader::from_reader(text.as_bytes()).headers()?.clone();
            let d = TrajectorySchema::count_state_columns(&header);
            if d == 0 {
                return Err(Error::Config(format!("{}: no s_0.. state columns", path.display())));
            }
            ingest_trajectories(text.as_bytes(), &config.schema(d))
        }
    }
}

fn fit_records(grid: &LocalModelGrid, extra: &serde_json::Value) -> Vec<serde_json::Value> {
    grid.models
        .iter()
        .map(|m| {
            let mut r = json!({ "event": "local-fit", "z": m.z, "diagnostics": m.diagnostics });
            if let (Some(r), Some(extra)) = (r.as_object_mut(), extra.as_object()) {
                r.extend(extra.clone());
            }
            r
        })
        .collect()
}

fn print_fit_summary(grid: &LocalModelGrid) {
    for m in &grid.models {
        let d = &m.diagnostics;
        let status = match (d.method, d.converged) {
            (FitMethod::Analytic, _) => "direct solve".to_string(),
            (_, true) => format!("converged after {} passes", d.passes),
            (_, false) => format!("not converged after {} passes", d.passes),
        };
        println!(
            "z = {:.4}: {status}, ess = {:.1}{}",
            m.z,
            d.ess,
            if d.warnings.is_empty() { String::new() } else { format!(" ({})", d.warnings.join("; ")) }
        );
    }
}

/// Normalize, fit one grid under the behavior policy and save it.
pub fn cmd_fit(config: &RunConfig) -> Result<()> {
    let raw = load_data(config)?;
    let (data, norm) = normalize_features(&raw)?;
    let features = FeatureMap::fit(config.basis_spec()?, &data)?;
    let grid = fit_local_grid(
        &data,
        &features,
        &config.kernel_spec()?,
        &config.grid_points()?,
        config.solver.gamma,
        &config.solver_config()?,
        config.method(),
        NextAction::Observed,
    )?;
    print_fit_summary(&grid);
    ModelFile::new(&grid, norm, config.mode, config.candidate_choice()).write(&config.out.join("model.json"))?;
    write_jsonl(&config.out.join("fit_diagnostics.jsonl"), &fit_records(&grid, &json!({})))
}

/// Run policy iteration as configured and return the final grid with its normalization.
pub fn policy_iteration(
    config: &RunConfig,
    raw: &BatchDataset,
) -> Result<(LocalModelGrid, NormalizationSpec, PolicyIterationDiagnostics)> {
    let initial = config.policy.initial_model.as_deref().map(ModelFile::read).transpose()?;
    let (data, norm) = match &initial {
        Some(model) => {
            if model.candidate != config.candidate_choice() || model.mode != config.mode {
                return Err(Error::Config("the initial model was fitted with a different candidate or mode".into()));
            }
            (model.normalization.apply(raw)?, model.normalization.clone())
        }
        None => normalize_features(raw)?,
    };
    let start = initial.as_ref().map(|m| m.grid().map(OwnedGreedyPolicy)).transpose()?;
    let features = FeatureMap::fit(config.basis_spec()?, &data)?;
    let (grid, diagnostics) = ksh_lspi(
        &data,
        &features,
        &config.kernel_spec()?,
        &config.grid_points()?,
        config.solver.gamma,
        &config.solver_config()?,
        &config.policy_config(),
        match &start {
            Some(p) => InitialPolicy::Given(p),
            None => InitialPolicy::Behavioral,
        },
    )?;
    Ok((grid, norm, diagnostics))
}

fn stop_name(stop: PolicyIterationStop) -> &'static str {
    match stop {
        PolicyIterationStop::Converged => "converged",
        PolicyIterationStop::MaxIterations => "max-iterations",
    }
}

/// Policy iteration; writes the final model and one diagnostics record per iteration.
pub fn cmd_policy_iterate(config: &RunConfig) -> Result<()> {
    let raw = load_data(config)?;
    let (grid, norm, diagnostics) = policy_iteration(config, &raw)?;
    print_fit_summary(&grid);
    let last = diagnostics.iterations.len();
    let records: Vec<_> = diagnostics
        .iterations
        .iter()
        .map(|r| {
            let stop = (r.iteration == last).then(|| stop_name(diagnostics.stop));
            println!("iteration {}: |B - B_prev|_F = {:e}", r.iteration, r.frobenius_delta);
            json!({
                "event": "policy-iteration",
                "iteration": r.iteration,
                "frobenius_delta": r.frobenius_delta,
                "total_passes": r.total_passes,
                "all_converged": r.all_converged,
                "design_rows": r.design_rows,
                "stop": stop,
            })
        })
        .collect();
    println!("stopped: {}", stop_name(diagnostics.stop));
    ModelFile::new(&grid, norm, config.mode, config.candidate_choice()).write(&config.out.join("model.json"))?;
    write_jsonl(&config.out.join("policy_iterations.jsonl"), &records)?;
    write_jsonl(&config.out.join("fit_diagnostics.jsonl"), &fit_records(&grid, &json!({ "iteration": last })))
}

fn require_sim(config: &RunConfig, what: &str) -> Result<()> {
    if config.data.source != DataSource::Sim {
        return Err(Error::Config(format!("{what} needs data.source = \"sim\"")));
    }
    Ok(())
}

pub fn cmd_simulate(config: &RunConfig) -> Result<()> {
    require_sim(config, "simulate")?;
    let s = &config.data.sim;
    let batch = sample_trajectories(&config.sim_config()?, s.n, s.ell)?;
    let path = config.out.join("trajectories.csv");
    batch.write_csv(create(&path)?)?;
    println!("{} episodes of {} steps written to {}", s.n, s.ell, path.display());
    Ok(())
}

/// Regret of the greedy policy (loaded, or trained by policy iteration on
/// simulated data) against the baselines, on common evaluation episodes.
pub fn cmd_regret(config: &RunConfig) -> Result<()> {
    require_sim(config, "regret")?;
    let model = match &config.regret.model {
        Some(path) => ModelFile::read(path)?,
        None => {
            let raw = load_data(config)?;
            let (grid, norm, _) = policy_iteration(config, &raw)?;
            ModelFile::new(&grid, norm, config.mode, config.candidate_choice())
        }
    };
    let candidate = match model.candidate {
        CandidateChoice::Feature(j) => j,
        _ => return Err(Error::Config("regret needs a model whose candidate is a state feature".into())),
    };
    let sim = config.sim_config()?;
    if model.normalization.min.len() != sim.d {
        return Err(Error::Config(format!(
            "model has {} features, simulator has {}",
            model.normalization.min.len(),
            sim.d
        )));
    }
    let policy = model.policy()?;
    let r = &config.regret;
    let seed = config.seed ^ EVAL_STREAM;
    let controllers: [(&str, Controller<'_>); 4] = [
        ("policy", Controller::Policy { policy: &policy, candidate: Some(candidate) }),
        ("random", Controller::UniformRandom),
        ("behavior", Controller::UniformRandom),
        ("oracle", Controller::PerStepOracle),
    ];
    let reports: Vec<(&str, RegretReport)> = controllers
        .iter()
        .map(|(name, c)| Ok((*name, regret_analysis(&sim, *c, r.episodes, r.ell, seed)?)))
        .collect::<Result<_>>()?;

    let path = config.out.join("regret_episodes.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["policy", "episode", "achieved", "oracle", "mean_regret"])?;
    for (name, report) in &reports {
        for e in &report.episodes {
            w.write_record([
                name.to_string(),
                e.episode.to_string(),
                e.achieved.to_string(),
                e.oracle.to_string(),
                e.mean_regret.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = config.out.join("regret_summary.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["policy", "episodes", "steps", "mean_regret", "std_error"])?;
    for (name, report) in &reports {
        let n = report.episodes.len() as f64;
        let var = report.episodes.iter().map(|e| (e.mean_regret - report.mean_regret).powi(2)).sum::<f64>()
            / (n - 1.0).max(1.0);
        w.write_record([
            name.to_string(),
            r.episodes.to_string(),
            r.ell.to_string(),
            report.mean_regret.to_string(),
            (var / n).sqrt().to_string(),
        ])?;
        println!("{name:>8}: mean regret {:.4}", report.mean_regret);
    }
    w.flush().map_err(io_err(&path))
}

pub fn cmd_cv(config: &RunConfig) -> Result<()> {
    let raw = load_data(config)?;
    let settings = FitSettings { method: config.method(), solver: config.solver_config()?, loss: config.loss() };
    let result = grid_search(&raw, &config.hyper_grid(), config.cv.folds, &settings, config.seed)?;
    result.write_csv(create(&config.out.join("cv.csv"))?)?;
    let records: Vec<_> = result
        .combinations
        .iter()
        .zip(&result.mean_loss)
        .zip(&result.errors)
        .map(|((h, loss), err)| json!({ "event": "cv-combination", "params": h, "mean_loss": loss, "error": err }))
        .collect();
    write_jsonl(&config.out.join("cv_diagnostics.jsonl"), &records)?;
    match result.best_params() {
        Some(best) => println!("best: {} (mean loss {})", serde_json::to_string(best).unwrap_or_default(), result.mean_loss[result.best.unwrap_or(0)]),
        None => println!("every combination failed"),
    }
    Ok(())
}

/// One CSV per requested action block, in data units.
pub fn cmd_export_components(config: &RunConfig) -> Result<()> {
    let e = &config.export;
    let path = e.model.clone().unwrap_or_else(|| config.out.join("model.json"));
    let model = ModelFile::read(&path)?;
    let grid = model.grid()?;
    let blocks = model.layout.actions.blocks();
    let actions = e.actions.clone().unwrap_or_else(|| (0..blocks).collect());
    let norm = &model.normalization;
    let (which, name) = match e.component {
        config::ComponentName::Marginal => (Component::Marginal, "marginal".to_string()),
        config::ComponentName::Joint => {
            let j = e.feature.ok_or_else(|| Error::Config("a joint export needs export.feature".into()))?;
            (Component::Joint { feature: j, points: even_grid(e.points) }, format!("joint_s_{j}"))
        }
    };
    for a in actions {
        let points = extract_components(&grid, &which, a)?;
        let path = config.out.join(format!("{name}_a{a}.csv"));
        let mut w = csv::Writer::from_writer(create(&path)?);
        match &which {
            Component::Marginal => {
                w.write_record(["z", "value"])?;
                for p in &points {
                    w.write_record([norm.candidate_to_raw(model.candidate, p.z).to_string(), p.value.to_string()])?;
                }
            }
            Component::Joint { feature, .. } => {
                w.write_record(["z", "s", "value"])?;
                for p in &points {
                    w.write_record([
                        norm.candidate_to_raw(model.candidate, p.z).to_string(),
                        norm.denormalize_feature(*feature, p.s.unwrap_or(f64::NAN)).to_string(),
                        p.value.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(io_err(&path))?;
        println!("{} rows written to {}", points.len(), path.display());
    }
    Ok(())
}
