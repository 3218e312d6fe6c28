use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CRITICAL: &str = "# f(x) = (1 - x)^2 / 2\na_0 = 0.5\na_1 = -1.0\na_2 = 0.5\n";
const SUPERCRITICAL: &str = "a_0 = 0.5\na_1 = -1.5\na_2 = 1.0\n";

fn qbranch(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbranch")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("crit.txt"), CRITICAL).unwrap();
    std::fs::write(dir.path().join("sup.txt"), SUPERCRITICAL).unwrap();
    dir
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn csv_column(text: &str, col: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == col).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn model_info_critical() {
    let dir = workspace();
    let o = qbranch(&["model-info", "--model", "crit.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("criticality: critical"));
    assert!(s.contains("beta = 1\n"));
    assert!(s.contains("limit of t^2 Q_11(t)) = 4\n"), "{s}");
}

#[test]
fn model_info_supercritical_writes_outputs() {
    let dir = workspace();
    let o = qbranch(&["model-info", "--model", "sup.txt", "--out", "info"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("beta = 0.6065306597126334"), "{s}");
    assert!(s.contains("gamma = 2\n"));
    let info: serde_json::Value = serde_json::from_str(&read(&dir.path().join("info"), "model_info.json")).unwrap();
    assert!((info["q"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir.path().join("info"), "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "model-info");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn malformed_models_exit_with_code_1() {
    let dir = workspace();
    std::fs::write(dir.path().join("zero.txt"), "a_0 = 0\na_1 = -1\na_2 = 1\n").unwrap();
    let o = qbranch(&["model-info", "--model", "zero.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("a_0 = 0"), "{}", stderr(&o));

    std::fs::write(dir.path().join("sum.txt"), "a_0 = 0.5\na_1 = -1.2\na_2 = 0.5\n").unwrap();
    let o = qbranch(&["model-info", "--model", "sum.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("a_1"), "{}", stderr(&o));

    std::fs::write(dir.path().join("typo.txt"), "a_0 = 0.5\n\na_1 = -1,0\n").unwrap();
    let o = qbranch(&["model-info", "--model", "typo.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("typo.txt:3"), "{}", stderr(&o));

    let o = qbranch(&["model-info", "--model", "missing.txt"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_code_1() {
    let dir = workspace();
    for args in [
        vec!["verify-theorems", "--model", "crit.txt", "--t-grid", ""],
        vec!["verify-theorems", "--model", "crit.txt"],
        vec!["estimate", "--model", "crit.txt", "--t-grid", "20", "--reps", "2000"],
        vec!["estimate", "--model", "crit.txt", "--t-grid", "0.5", "--seed", "1"],
        vec!["estimate", "--model", "crit.txt", "--t-grid", "5", "--seed", "1", "--reps", "10"],
        vec!["simulate", "--model", "crit.txt", "--seed", "1"],
        vec!["frobnicate"],
        vec!["estimate", "--reps", "many"],
    ] {
        let o = qbranch(&args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(qbranch(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn verify_theorems_critical() {
    let dir = workspace();
    let o = qbranch(&["verify-theorems", "--model", "crit.txt", "--t-grid", "10,20,40", "--out", "v"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let out = dir.path().join("v");
    let stat: Vec<f64> = csv_column(&read(&out, "theorem_a.csv"), "statistic").iter().map(|s| s.parse().unwrap()).collect();
    // t² Q_11(t) = 4 t² / (2 + t)² for this model.
    for (s, t) in stat.iter().zip([10.0, 20.0, 40.0]) {
        assert!((s - 4.0 * t * t / ((2.0 + t) * (2.0 + t))).abs() < 1e-7);
    }
    let conv = read(&out, "variance_convergence.csv");
    assert!(conv.starts_with("t,normalized_variance,stderr,method\n"));
    assert_eq!(csv_column(&conv, "method"), vec!["series"; 3]);
    assert!(read(&out, "summary.txt").contains("3 of 3 gates passed"));
    let manifest = read(&out, "manifest.json");
    for f in ["theorem_a.csv", "variance_convergence.csv", "summary.txt"] {
        assert!(manifest.contains(f));
    }
}

#[test]
fn verify_theorems_supercritical_with_monte_carlo() {
    let dir = workspace();
    let o = qbranch(
        &["verify-theorems", "--model", "sup.txt", "--t-grid", "5,10", "--reps", "20000", "--seed", "3", "--out", "v"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let conv = read(&dir.path().join("v"), "variance_convergence.csv");
    assert_eq!(csv_column(&conv, "method"), vec!["series", "series", "monte_carlo", "monte_carlo"]);
    let limit: Vec<f64> = csv_column(&read(&dir.path().join("v"), "theorem_a.csv"), "limit").iter().map(|s| s.parse().unwrap()).collect();
    assert!((limit[0] - 0.25).abs() < 1e-10);
}

#[test]
fn failed_gate_exits_with_code_3() {
    // Before t ≈ 3 the normalized variance overshoots 1, so the deviation grows.
    let dir = workspace();
    let o = qbranch(&["verify-theorems", "--model", "crit.txt", "--t-grid", "3,5", "--out", "v"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("gate variance trend: FAIL"));
    assert!(dir.path().join("v/manifest.json").exists());
}

#[test]
fn numeric_failure_exits_with_code_2() {
    let dir = workspace();
    let o = qbranch(&["verify-theorems", "--model", "crit.txt", "--t-grid", "20", "--jmax", "10"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("truncation"));
}

#[test]
fn estimate_is_deterministic() {
    let dir = workspace();
    let args = |out: &'static str| ["estimate", "--model", "crit.txt", "--t-grid", "5,8", "--reps", "3000", "--seed", "42", "--out", out];
    assert_eq!(qbranch(&args("a"), dir.path()).status.code(), Some(0));
    assert_eq!(qbranch(&args("b"), dir.path()).status.code(), Some(0));
    let (a, b) = (read(&dir.path().join("a"), "estimate.json"), read(&dir.path().join("b"), "estimate.json"));
    assert_eq!(a.as_bytes(), b.as_bytes());
    let reports: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert_eq!(reports[0]["master_seed"], 42);
    assert_eq!(read(&dir.path().join("a"), "estimate.csv"), read(&dir.path().join("b"), "estimate.csv"));
}

#[test]
fn estimate_supercritical_is_unbiased() {
    let dir = workspace();
    let o = qbranch(&["estimate", "--model", "sup.txt", "--t-grid", "10", "--reps", "20000", "--seed", "5", "--out", "e"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&read(&dir.path().join("e"), "estimate.json")).unwrap();
    let r = &r[0];
    let mean = r["mean_estimate"].as_f64().unwrap();
    let se = r["se_mean"].as_f64().unwrap();
    assert!((mean - (-0.5f64).exp()).abs() < 4.0 * se, "{mean} ± {se}");
    assert!(r["exact_series_variance"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_writes_paths_and_states() {
    let dir = workspace();
    let o = qbranch(
        &["simulate", "--model", "sup.txt", "--process", "mbs", "--i0", "3", "--reps", "4", "--seed", "9", "--t-grid", "0.5,1,2", "--out", "s"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("s");
    let states = read(&out, "states.csv");
    assert_eq!(states.lines().count(), 1 + 4 * 3);
    let paths = read(&out, "trajectories.csv");
    assert!(paths.starts_with("replicate,time,state\n0,0,3\n"), "{paths}");
    let manifest: serde_json::Value = serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["parameters"]["process"], "mbs");
}

#[test]
fn experiment_file_with_flag_override() {
    let dir = workspace();
    let sub: PathBuf = dir.path().join("exp");
    std::fs::create_dir(&sub).unwrap();
    std::fs::write(sub.join("run.cfg"), "# estimate run\nmodel = ../sup.txt\nt_grid = 6\nreps = 2000\nseed = 1\nout = results\n").unwrap();
    let o = qbranch(&["estimate", "--config", "exp/run.cfg", "--seed", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_str(&read(&sub.join("results"), "manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 2);

    std::fs::write(sub.join("bad.cfg"), "model = ../sup.txt\nspeed = 3\n").unwrap();
    let o = qbranch(&["estimate", "--config", "exp/bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));
}
