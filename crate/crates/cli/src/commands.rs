use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qbranch::estimator::{
    convergence_csv, mc_study, theorem_convergence_table, variance_series_from_table, ConvergenceParams, ConvergenceRow,
    EstimatorReport, Method, StudyOptions,
};
use qbranch::model::{kolmogorov_constant, qprocess_densities};
use qbranch::numerics::{default_j_max, qprocess_transition_grid, theorem_a_constant, TableOptions, DEFAULT_QUAD_TOL};
use qbranch::simulate::{run_replicates, simulate_mbs, simulate_qprocess_with, state_at, QProcessRates, SimOptions};
use qbranch::BranchingModel;
use serde_json::{json, Value};

use crate::config::{load_model, ExperimentConfig, ModelFile, ProcessKind};
use crate::error::CliError;

const DEFAULT_OUT: &str = "qbranch-output";
const DEFAULT_REPS: usize = 100_000;
/// Series truncation must not move the value by more than this fraction.
const SERIES_REMAINDER_GATE: f64 = 1e-6;
/// Monte Carlo and series variances must agree within this many standard errors.
const MC_GATE_SE: f64 = 4.0;

/// Collects output files and writes the manifest last.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: vec![] })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, model_path: &Path, file: &ModelFile, params: Value, seed: Option<u64>) -> Result<(), CliError> {
        self.files.push("manifest.json".into());
        let manifest = json!({
            "tool": "qbranch",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "model": {
                "path": model_path.display().to_string(),
                "intensities": file.intensities,
                "tol": file.tol,
            },
            "parameters": params,
            "seed": seed,
            "outputs": self.files,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

fn table_options(cfg: &ExperimentConfig) -> TableOptions {
    let mut opts = TableOptions::default();
    if let Some(tol) = cfg.tol {
        opts.ode_tol = tol;
    }
    opts
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn require_estimator_grid(cfg: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
    let ts = cfg.grid()?;
    if let Some(t) = ts.iter().find(|&&t| t <= 1.0) {
        return Err(CliError::Usage(format!("estimator times must exceed 1, got {t}")));
    }
    Ok(ts)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn model_info(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let path = cfg.model_path()?;
    let (file, m) = load_model(path)?;
    let mut s = String::new();
    let _ = writeln!(s, "model: {}", path.display());
    let coeffs: Vec<String> = m.intensities().as_slice().iter().enumerate().map(|(k, a)| format!("a_{k}={a}")).collect();
    let _ = writeln!(s, "intensities: {}", coeffs.join(" "));
    let _ = writeln!(s, "criticality: {}", m.criticality());
    let _ = writeln!(s, "q = {}", m.q());
    let _ = writeln!(s, "beta = {}", m.beta());
    let _ = writeln!(s, "ln beta = {}", m.ln_beta());
    let _ = writeln!(s, "b = {}", m.b());
    match m.gamma() {
        Some(g) => _ = writeln!(s, "gamma = {g}"),
        None => _ = writeln!(s, "gamma = undefined (beta = 1)"),
    }
    let _ = writeln!(s, "E_1 W(1) = {}", m.mean_w1());
    let limit = theorem_a_constant(&m);
    let a_const = if m.is_critical() {
        let _ = writeln!(s, "theorem A constant (limit of t^2 Q_11(t)) = {limit}");
        None
    } else {
        let a = kolmogorov_constant(&m, DEFAULT_QUAD_TOL)?;
        let _ = writeln!(s, "Kolmogorov constant = {a}");
        let _ = writeln!(s, "theorem A constant (limit of Q_11(t)) = {limit}");
        Some(a)
    };
    let dens = qprocess_densities(&m);
    s.push_str("Q-process densities:\nj,p_j\n");
    for (j, p) in dens.iter() {
        let _ = writeln!(s, "{j},{p}");
    }

    if let Some(dir) = &cfg.out {
        let mut out = Output::create(dir)?;
        let info = json!({
            "criticality": m.criticality().to_string(),
            "q": m.q(),
            "beta": m.beta(),
            "ln_beta": m.ln_beta(),
            "b": m.b(),
            "gamma": m.gamma(),
            "mean_w1": m.mean_w1(),
            "kolmogorov_constant": a_const,
            "theorem_a_constant": limit,
            "densities": dens.iter().map(|(j, p)| json!({"j": j, "p": p})).collect::<Vec<_>>(),
        });
        out.write("model_info.json", &(serde_json::to_string_pretty(&info).expect("serializes") + "\n"))?;
        out.write("model_info.txt", &s)?;
        out.finish("model-info", path, &file, json!({}), None)?;
    }
    Ok(s)
}

struct Gate {
    name: String,
    pass: bool,
    detail: String,
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15)
}

fn theorem_a_gate(m: &BranchingModel, ts: &[f64], q11: &[f64]) -> (String, Gate) {
    let limit = theorem_a_constant(m);
    let stat: Vec<f64> = ts.iter().zip(q11).map(|(&t, &q)| if m.is_critical() { t * t * q } else { q }).collect();
    let dev: Vec<f64> = stat.iter().map(|s| (s - limit).abs()).collect();
    let mut csv = String::from("t,statistic,limit,abs_deviation\n");
    for ((t, s), d) in ts.iter().zip(&stat).zip(&dev) {
        let _ = writeln!(csv, "{t:?},{s:?},{limit:?},{d:?}");
    }
    let what = if m.is_critical() { "t^2 Q_11(t)" } else { "Q_11(t)" };
    let gate = Gate {
        name: "theorem A trend".into(),
        pass: non_increasing(&dev),
        detail: format!("|{what} - {limit}| = {}", dev.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ")),
    };
    (csv, gate)
}

fn variance_gate(m: &BranchingModel, rows: &[ConvergenceRow]) -> Gate {
    let v: Vec<f64> = rows.iter().map(|r| r.normalized_variance).collect();
    if m.is_critical() {
        let dev: Vec<f64> = v.iter().map(|x| (x - 1.0).abs()).collect();
        Gate {
            name: "variance trend".into(),
            pass: non_increasing(&dev),
            detail: format!("(t/2) Var = {}", v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ")),
        }
    } else {
        let max = v.iter().copied().fold(f64::MIN, f64::max);
        let min = v.iter().copied().fold(f64::MAX, f64::min);
        Gate {
            name: "variance bounded".into(),
            pass: v.iter().all(|x| x.is_finite() && *x > 0.0) && max / min < 2.0,
            detail: format!("Var in [{min:.5}, {max:.5}], max/min {:.4}", max / min),
        }
    }
}

pub fn verify_theorems(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let path = cfg.model_path()?;
    let (file, m) = load_model(path)?;
    let ts = require_estimator_grid(cfg)?;
    let opts = table_options(cfg);
    let t_last = *ts.last().expect("grid is non-empty");
    let j_max = cfg.jmax.unwrap_or_else(|| default_j_max(&m, 1, t_last));
    let tables = qprocess_transition_grid(&m, 1, &ts, j_max, &opts)?;

    let q11: Vec<f64> = tables.iter().map(|t| t.prob(1)).collect();
    let (theorem_a_csv, ga) = theorem_a_gate(&m, &ts, &q11);
    let mut gates = vec![ga];

    let norm = |t: f64| if m.is_critical() { t / 2.0 } else { 1.0 };
    let series: Vec<_> = tables.iter().map(|tab| variance_series_from_table(&m, tab)).collect();
    let mut rows: Vec<ConvergenceRow> = series
        .iter()
        .map(|s| ConvergenceRow {
            t: s.t,
            normalized_variance: norm(s.t) * s.value,
            stderr: norm(s.t) * s.remainder_bound,
            method: Method::Series,
        })
        .collect();
    gates.push(variance_gate(&m, &rows));
    let worst = series.iter().map(|s| s.remainder_bound / s.value.abs()).fold(0.0, f64::max);
    gates.push(Gate {
        name: "series truncation".into(),
        pass: worst <= SERIES_REMAINDER_GATE,
        detail: format!("largest relative remainder bound {worst:.2e}"),
    });

    let mut seed = None;
    if let Some(reps) = cfg.reps {
        let s = cfg.seed()?;
        seed = Some(s);
        let params = ConvergenceParams {
            n_reps: reps,
            master_seed: s,
            study: StudyOptions { tables: opts, j_max: cfg.jmax, ..Default::default() },
        };
        let mc = theorem_convergence_table(&m, &ts, Method::MonteCarlo, &params)?;
        let z: Vec<f64> = mc.iter().zip(&rows).map(|(a, b)| (a.normalized_variance - b.normalized_variance) / a.stderr).collect();
        gates.push(Gate {
            name: "monte carlo vs series".into(),
            pass: z.iter().all(|z| z.abs() <= MC_GATE_SE),
            detail: format!("z = {}", z.iter().map(|z| format!("{z:+.2}")).collect::<Vec<_>>().join(", ")),
        });
        rows.extend(mc);
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "model: {} ({})", path.display(), m.criticality());
    for g in &gates {
        let _ = writeln!(summary, "gate {}: {} ({})", g.name, if g.pass { "PASS" } else { "FAIL" }, g.detail);
    }
    let failed = gates.iter().filter(|g| !g.pass).count();
    let _ = writeln!(summary, "{} of {} gates passed", gates.len() - failed, gates.len());

    let mut out = Output::create(&out_dir(cfg))?;
    out.write("theorem_a.csv", &theorem_a_csv)?;
    out.write("variance_convergence.csv", &convergence_csv(&rows))?;
    out.write("summary.txt", &summary)?;
    let params = json!({ "t_grid": ts, "jmax": j_max, "ode_tol": opts.ode_tol, "reps": cfg.reps });
    out.finish("verify-theorems", path, &file, params, seed)?;

    if failed > 0 {
        print!("{summary}");
        return Err(CliError::Gate(failed));
    }
    Ok(summary)
}

fn estimate_csv(reports: &[EstimatorReport]) -> String {
    let mut s = String::from(
        "t,n_total,n_excluded,mean_estimate,se_mean,sample_variance,se_sample_variance,exclusion_probability,exact_series_variance,conditional_series_variance\n",
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:?},{},{},{:?},{:?},{:?},{:?},{:?},{},{}",
            r.t,
            r.n_total,
            r.n_excluded,
            r.mean_estimate,
            r.se_mean,
            r.sample_variance,
            r.se_sample_variance,
            r.exclusion_probability,
            fmt_opt(r.exact_series_variance),
            fmt_opt(r.conditional_series_variance)
        );
    }
    s
}

pub fn estimate(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let path = cfg.model_path()?;
    let (file, m) = load_model(path)?;
    let ts = require_estimator_grid(cfg)?;
    let seed = cfg.seed()?;
    let reps = cfg.reps.unwrap_or(DEFAULT_REPS);
    let i0 = cfg.i0.unwrap_or(1);
    let opts = StudyOptions { tables: table_options(cfg), j_max: cfg.jmax, ..Default::default() };
    let reports: Vec<EstimatorReport> = ts.iter().map(|&t| mc_study(&m, i0, t, reps, seed, &opts)).collect::<Result<_, _>>()?;

    let mut s = String::new();
    for r in &reports {
        let _ = writeln!(
            s,
            "t = {}: mean {} ± {} (beta {}), sample variance {} ± {}, excluded {}/{}",
            r.t, r.mean_estimate, r.se_mean, r.beta, r.sample_variance, r.se_sample_variance, r.n_excluded, r.n_total
        );
        if let (Some(v), Some(c)) = (r.exact_series_variance, r.conditional_series_variance) {
            let _ = writeln!(s, "  series variance {v} (conditional on W(t) >= 2: {c})");
        }
    }
    let mut out = Output::create(&out_dir(cfg))?;
    out.write("estimate.json", &(serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n"))?;
    out.write("estimate.csv", &estimate_csv(&reports))?;
    let params = json!({ "t_grid": ts, "reps": reps, "i0": i0, "jmax": cfg.jmax, "ode_tol": opts.tables.ode_tol });
    out.finish("estimate", path, &file, params, Some(seed))?;
    Ok(s)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let path = cfg.model_path()?;
    let (file, m) = load_model(path)?;
    let seed = cfg.seed()?;
    let reps = cfg.reps.unwrap_or(1);
    let i0 = cfg.i0.unwrap_or(1);
    let process = cfg.process.unwrap_or(ProcessKind::Q);
    let times = match &cfg.t_grid {
        Some(_) => cfg.grid()?,
        None => vec![],
    };
    let horizon = match (cfg.horizon, times.last()) {
        (Some(h), _) => h,
        (None, Some(&t)) => t,
        (None, None) => return Err(CliError::Usage("simulate needs --horizon or --t-grid".into())),
    };
    if let Some(&t) = times.last() {
        if t > horizon {
            return Err(CliError::Usage(format!("t-grid entry {t} exceeds the horizon {horizon}")));
        }
    }
    let sim = SimOptions::default();
    let rates = QProcessRates::new(&m);
    let trajectories = run_replicates(reps, seed, |_, rng| match process {
        ProcessKind::Q => simulate_qprocess_with(&rates, i0, horizon, rng, &sim),
        ProcessKind::Mbs => simulate_mbs(&m, i0, horizon, rng, &sim),
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    if trajectories.iter().any(|t| t.overflowed) {
        return Err(qbranch::Error::StateOverflow { cap: sim.state_cap }.into());
    }

    let mut paths = String::from("replicate,time,state\n");
    for (r, tr) in trajectories.iter().enumerate() {
        for line in tr.to_csv().lines().skip(1) {
            let _ = writeln!(paths, "{r},{line}");
        }
    }
    let mut out = Output::create(&out_dir(cfg))?;
    out.write("trajectories.csv", &paths)?;
    if !times.is_empty() {
        let mut states = String::from("replicate,t,state\n");
        for (r, tr) in trajectories.iter().enumerate() {
            for (t, w) in times.iter().zip(state_at(tr, &times)?) {
                let _ = writeln!(states, "{r},{t:?},{w}");
            }
        }
        out.write("states.csv", &states)?;
    }
    let kind = match process {
        ProcessKind::Q => "q",
        ProcessKind::Mbs => "mbs",
    };
    let params = json!({ "process": kind, "reps": reps, "i0": i0, "horizon": horizon, "t_grid": times });
    out.finish("simulate", path, &file, params, Some(seed))?;
    let jumps: usize = trajectories.iter().map(|t| t.jump_times.len()).sum();
    Ok(format!("simulated {reps} {kind} trajectories to t = {horizon} ({jumps} jumps) into {}\n", out_dir(cfg).display()))
}
