use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kshrl::cli::model::ModelFile;
use tempfile::TempDir;

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Run { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn kshrl(&self, command: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_kshrl"))
            .arg(command)
            .arg("--config")
            .arg(self.dir.path().join("run.toml"))
            .arg("--out")
            .arg(self.out())
            .args(extra)
            .output()
            .unwrap()
    }

    fn ok(&self, command: &str) {
        let out = self.kshrl(command, &[]);
        assert_eq!(out.status.code(), Some(0), "{command}: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn csv(&self, name: &str) -> Vec<Vec<String>> {
        let mut reader = csv::Reader::from_path(self.out().join(name)).unwrap();
        reader.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
    }
}

const SMALL: &str = r#"
seed = 4
[data.sim]
d = 4
n = 40
ell = 8
"#;

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_one_row_per_step() {
    let run = Run::new("seed = 1\n");
    run.ok("simulate");
    let rows = run.csv("trajectories.csv");
    assert_eq!(rows.len(), 100 * 10);
    let header = csv::Reader::from_path(run.out().join("trajectories.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(header.iter().collect::<Vec<_>>(), ["traj_id", "t", "s_0", "s_1", "s_2", "s_3", "s_4", "action", "reward"]);
}

#[test]
fn fit_then_export_marginal_and_joint() {
    let run = Run::new(SMALL);
    run.ok("fit");
    let model = ModelFile::read(&run.out().join("model.json")).unwrap();
    assert_eq!(model.zs.len(), 25);
    let diagnostics = fs::read_to_string(run.out().join("fit_diagnostics.jsonl")).unwrap();
    assert_eq!(diagnostics.lines().count(), 25);
    for line in diagnostics.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    run.ok("export-components");
    for a in 0..2 {
        assert_eq!(run.csv(&format!("marginal_a{a}.csv")).len(), 25);
    }

    let joint = Run::new(&format!("{SMALL}\n[export]\ncomponent = \"joint\"\nfeature = 2\nmodel = {:?}\n", run.out().join("model.json")));
    joint.ok("export-components");
    let rows = joint.csv("joint_s_2_a1.csv");
    assert_eq!(rows.len(), 25 * 50);
}

#[test]
fn single_policy_iteration_matches_fit() {
    let config = format!("{SMALL}\n[policy]\nmax_iters = 1\n");
    let run = Run::new(&config);
    run.ok("fit");
    let fitted = ModelFile::read(&run.out().join("model.json")).unwrap();
    run.ok("policy-iterate");
    let iterated = ModelFile::read(&run.out().join("model.json")).unwrap();
    assert_eq!(fitted.coefficients, iterated.coefficients);
    let records = fs::read_to_string(run.out().join("policy_iterations.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 1);
}

#[test]
fn oracle_row_has_zero_regret() {
    let run = Run::new(&format!("{SMALL}\n[regret]\nepisodes = 50\n"));
    run.ok("regret");
    let summary = run.csv("regret_summary.csv");
    let policies: Vec<&str> = summary.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(policies, ["policy", "random", "behavior", "oracle"]);
    let oracle = &summary[3];
    assert_eq!(oracle[3].parse::<f64>().unwrap(), 0.0);
    let random: f64 = summary[1][3].parse().unwrap();
    assert!(random > 0.0);
}

#[test]
fn single_point_cv_grid_gives_one_row() {
    let run = Run::new(&format!("{SMALL}\n[cv]\nfolds = 3\n"));
    run.ok("cv");
    let rows = run.csv("cv.csv");
    assert_eq!(rows.len(), 1);

    let wide = Run::new(&format!("{SMALL}\n[cv]\nfolds = 3\nbandwidth = [0.1, 0.3]\nlambda = [0.0, 1.0]\n"));
    wide.ok("cv");
    assert_eq!(wide.csv("cv.csv").len(), 4);
}

#[test]
fn missing_csv_is_a_usage_error_naming_the_path() {
    let run = Run::new("[data]\nsource = \"csv\"\npath = \"/nonexistent/trajectories.csv\"\n");
    let out = run.kshrl("fit", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/trajectories.csv"), "{}", stderr(&out));
}

#[test]
fn unknown_key_and_bad_flag_are_usage_errors() {
    let run = Run::new("[solver]\nlamda = 1.0\n");
    assert_eq!(run.kshrl("fit", &[]).status.code(), Some(2));
    let run = Run::new(SMALL);
    assert_eq!(run.kshrl("fit", &["--threads", "many"]).status.code(), Some(2));
    assert_eq!(run.kshrl("no-such-command", &[]).status.code(), Some(2));
}

#[test]
fn grid_point_without_kernel_support_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("two_clusters.csv");
    let mut text = String::from("traj_id,t,s_0,s_1,action,reward\n");
    for i in 0..20 {
        for t in 0..4 {
            let s0 = if i % 2 == 0 { 0.0 } else { 1.0 };
            let s1 = (i * 4 + t) as f64 / 80.0;
            push_line(&mut text, &format!("{i},{t},{s0},{s1},{},{}", (i + t) % 2, s1));
        }
    }
    fs::write(&csv_path, text).unwrap();
    let config = format!(
        "[data]\nsource = \"csv\"\npath = {:?}\n[kernel]\nfamily = \"boxcar\"\nbandwidth = 0.1\n[grid]\nsize = 3\n",
        csv_path
    );
    let run = Run::new(&config);
    let out = run.kshrl("fit", &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("0.5"), "{}", stderr(&out));
}

fn push_line(text: &mut String, line: &str) {
    text.push_str(line);
    text.push('\n');
}

#[test]
fn exporting_the_candidate_feature_is_rejected() {
    let run = Run::new(SMALL);
    run.ok("fit");
    let export = Run::new(&format!(
        "{SMALL}\n[export]\ncomponent = \"joint\"\nfeature = 0\nmodel = {:?}\n",
        run.out().join("model.json")
    ));
    let out = export.kshrl("export-components", &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!export.out().join("joint_s_0_a0.csv").exists());
}

#[test]
fn saved_model_round_trips_byte_for_byte() {
    let run = Run::new(SMALL);
    run.ok("fit");
    let path = run.out().join("model.json");
    let text = fs::read_to_string(&path).unwrap();
    let copy: &Path = &run.dir.path().join("copy.json");
    ModelFile::from_json(&text).unwrap().write(copy).unwrap();
    assert_eq!(fs::read(copy).unwrap(), text.as_bytes());
}

#[test]
fn seed_flag_overrides_config() {
    let a = Run::new(SMALL);
    a.ok("simulate");
    let b = Run::new(SMALL);
    let out = b.kshrl("simulate", &["--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let c = Run::new(SMALL);
    c.kshrl("simulate", &["--seed", "4"]);
    let read = |r: &Run| fs::read(r.out().join("trajectories.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            kshrl::cli::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}
