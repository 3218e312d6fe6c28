//! The ratio estimator β̂(t) = (W(t+1) - E_1 W(1)) / (W(t) - 1), its Monte Carlo
//! study, and the exact variance series
//!
//! ```text
//! Var β̂(t) = Σ_{k>=1} Q_{1,k+1}(t) / k² · Var_{k+1} W(1).
//! ```
//!
//! β̂ is undefined when W(t) = 1. Such replicates are excluded and counted;
//! `mean_estimate` and `sample_variance` are conditional on W(t) >= 2. The
//! series assigns the W(t) = 1 term zero weight (the estimator's algebraic limit
//! there is β itself), so its sampling counterpart is
//! `limit_convention_variance`, which averages (β̂ - β)² over all replicates
//! with excluded ones contributing zero. Dividing the series by 1 - Q_11(t)
//! gives the conditional variance, reported as `conditional_series_variance`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BranchingModel;
use crate::numerics::{default_j_max, qprocess_transition_grid, var_w, TableOptions, TransitionTable};
use crate::simulate::{run_replicates, simulate_qprocess_with, state_at, QProcessRates, SimOptions};

pub const MIN_REPLICATES: usize = 1000;

/// β̂ for one observed pair (W(t), W(t+1)).
pub fn beta_hat(w_t: u64, w_t1: u64, m: &BranchingModel) -> Result<f64> {
    if w_t == 0 || w_t1 == 0 {
        return Err(Error::InvalidArgument("Q-process states are >= 1".into()));
    }
    if w_t == 1 {
        return Err(Error::UndefinedAtOne);
    }
    Ok((w_t1 as f64 - m.mean_w1()) / (w_t as f64 - 1.0))
}

/// Pairwise (cascade) summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean, unbiased sample variance and delete-one jackknife standard error of
/// the sample variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_variance: f64,
}

pub fn summarize(xs: &[f64]) -> SampleSummary {
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    if n < 3 {
        return SampleSummary { n, mean, variance: f64::NAN, se_variance: f64::NAN };
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let ss = pairwise_sum(&sq);
    let nf = n as f64;
    let variance = ss / (nf - 1.0);
    // Leaving out x_i removes n/(n-1) (x_i - mean)² from the centred sum.
    let loo: Vec<f64> = sq.iter().map(|d2| (ss - d2 * nf / (nf - 1.0)) / (nf - 2.0)).collect();
    let loo_mean = pairwise_sum(&loo) / nf;
    let dev: Vec<f64> = loo.iter().map(|v| (v - loo_mean).powi(2)).collect();
    let se_variance = ((nf - 1.0) / nf * pairwise_sum(&dev)).sqrt();
    SampleSummary { n, mean, variance, se_variance }
}

/// Value of the exact variance series with its truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub t: f64,
    pub value: f64,
    /// Upper bound on the omitted tail Σ_{k>K}.
    pub remainder_bound: f64,
    pub truncation_mass: f64,
    /// Q_11(t) from the same table.
    pub q11: f64,
}

/// C with Var_{k+1} W(1) <= C (k+1) for all k >= 1. Var_j W(1) is affine
/// in j, A (j-1) + B with A, B >= 0, and j >= 2.
fn var_growth_constant(m: &BranchingModel) -> f64 {
    let intercept = var_w(m, 1, 1.0);
    let slope = var_w(m, 2, 1.0) - intercept;
    slope + intercept / 2.0
}

/// Series from an existing Q_1j table; K = J_max - 1.
pub fn variance_series_from_table(m: &BranchingModel, table: &TransitionTable) -> SeriesValue {
    let kmax = table.j_max() - 1;
    let terms: Vec<f64> = (1..=kmax)
        .map(|k| {
            let kf = k as f64;
            table.prob(k + 1) / (kf * kf) * var_w(m, k + 1, 1.0)
        })
        .collect();
    let kf = kmax as f64;
    let remainder_bound = table.truncation_mass * var_growth_constant(m) * (kf + 2.0) / (kf * kf);
    SeriesValue {
        t: table.t,
        value: pairwise_sum(&terms),
        remainder_bound,
        truncation_mass: table.truncation_mass,
        q11: table.prob(1),
    }
}

fn check_estimator_time(t: f64) -> Result<()> {
    if !(t > 1.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("estimator requires t > 1, got {t}")));
    }
    Ok(())
}

/// Σ_{k=1..K} Q_{1,k+1}(t)/k² Var_{k+1}W(1), from a Q-table truncated at K+1.
pub fn exact_variance_series(m: &BranchingModel, t: f64, k: usize, opts: &TableOptions) -> Result<SeriesValue> {
    check_estimator_time(t)?;
    if k == 0 {
        return Err(Error::InvalidArgument("series needs K >= 1".into()));
    }
    let table = qprocess_transition_grid(m, 1, &[t], k + 1, opts)?.pop().expect("one table");
    Ok(variance_series_from_table(m, &table))
}

/// Series values on a sorted t-grid with the default truncation, one ODE sweep.
pub fn exact_variance_series_grid(m: &BranchingModel, ts: &[f64], opts: &TableOptions) -> Result<Vec<SeriesValue>> {
    for &t in ts {
        check_estimator_time(t)?;
    }
    let Some(&t_last) = ts.last() else {
        return Ok(vec![]);
    };
    let j_max = default_j_max(m, 1, t_last);
    let tables = qprocess_transition_grid(m, 1, ts, j_max, opts)?;
    Ok(tables.iter().map(|tab| variance_series_from_table(m, tab)).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct StudyOptions {
    pub sim: SimOptions,
    pub tables: TableOptions,
    /// Also evaluate the exact series (only meaningful for i0 = 1).
    pub with_series: bool,
    /// Truncation of the Q-table; `None` uses [`default_j_max`].
    pub j_max: Option<usize>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { sim: SimOptions::default(), tables: TableOptions::default(), with_series: true, j_max: None }
    }
}

/// Monte Carlo summary of β̂(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub t: f64,
    pub initial_state: u64,
    pub master_seed: u64,
    pub beta: f64,
    pub n_total: usize,
    pub n_excluded: usize,
    pub n_used: usize,
    pub mean_estimate: f64,
    pub sample_variance: f64,
    pub se_mean: f64,
    /// Jackknife standard error of `sample_variance`.
    pub se_sample_variance: f64,
    pub exclusion_fraction: f64,
    /// Q_{i0,1}(t), the probability of an excluded replicate.
    pub exclusion_probability: f64,
    /// Mean when excluded replicates are assigned β̂ = β.
    pub limit_convention_mean: f64,
    /// Mean of (β̂ - β)² over all replicates, zero for excluded ones.
    pub limit_convention_variance: f64,
    pub se_limit_convention_variance: f64,
    pub exact_series_variance: Option<f64>,
    pub exact_series_remainder: Option<f64>,
    /// Series divided by 1 - Q_11(t): the variance conditional on W(t) >= 2.
    pub conditional_series_variance: Option<f64>,
    /// t/2 · sample_variance when β = 1, sample_variance otherwise.
    pub theorem_normalization: f64,
}

/// Simulates `n_reps` Q-process paths on [0, t+1] and summarizes β̂(t).
pub fn mc_study(
    m: &BranchingModel,
    i0: u64,
    t: f64,
    n_reps: usize,
    master_seed: u64,
    opts: &StudyOptions,
) -> Result<EstimatorReport> {
    check_estimator_time(t)?;
    if n_reps < MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!("need at least {MIN_REPLICATES} replicates, got {n_reps}")));
    }
    if i0 == 0 {
        return Err(Error::InvalidArgument("initial state must be >= 1".into()));
    }
    let rates = QProcessRates::new(m);
    let times = [t, t + 1.0];
    let pairs: Vec<(u64, u64)> = run_replicates(n_reps, master_seed, |_, rng| -> Result<(u64, u64)> {
        let traj = simulate_qprocess_with(&rates, i0, t + 1.0, rng, &opts.sim)?;
        if traj.overflowed {
            return Err(Error::StateOverflow { cap: opts.sim.state_cap });
        }
        let w = state_at(&traj, &times)?;
        Ok((w[0], w[1]))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let beta = m.beta();
    let estimates: Vec<f64> = pairs.iter().filter(|(wt, _)| *wt >= 2).map(|&(wt, wt1)| beta_hat(wt, wt1, m)).collect::<Result<_>>()?;
    let n_used = estimates.len();
    let n_excluded = n_reps - n_used;
    if n_used == 0 {
        return Err(Error::AllExcluded(n_reps));
    }
    let summary = summarize(&estimates);
    let nt = n_reps as f64;

    let sq_dev: Vec<f64> = pairs
        .iter()
        .map(|&(wt, wt1)| if wt >= 2 { (beta_hat(wt, wt1, m).expect("wt >= 2") - beta).powi(2) } else { 0.0 })
        .collect();
    let lc = summarize(&sq_dev);
    let limit_convention_mean = (pairwise_sum(&estimates) + n_excluded as f64 * beta) / nt;

    let table_j = opts.j_max.unwrap_or_else(|| default_j_max(m, i0 as usize, t));
    let q_table = qprocess_transition_grid(m, i0 as usize, &[t], table_j, &opts.tables)?.pop().expect("one table");
    let exclusion_probability = q_table.prob(1);

    let series = if opts.with_series && i0 == 1 { Some(variance_series_from_table(m, &q_table)) } else { None };

    let theorem_normalization = if m.is_critical() { t / 2.0 * summary.variance } else { summary.variance };
    Ok(EstimatorReport {
        t,
        initial_state: i0,
        master_seed,
        beta,
        n_total: n_reps,
        n_excluded,
        n_used,
        mean_estimate: summary.mean,
        sample_variance: summary.variance,
        se_mean: (summary.variance / n_used as f64).sqrt(),
        se_sample_variance: summary.se_variance,
        exclusion_fraction: n_excluded as f64 / nt,
        exclusion_probability,
        limit_convention_mean,
        limit_convention_variance: lc.mean,
        se_limit_convention_variance: (lc.variance / nt).sqrt(),
        exact_series_variance: series.map(|s| s.value),
        exact_series_remainder: series.map(|s| s.remainder_bound),
        conditional_series_variance: series.map(|s| s.value / (1.0 - s.q11)),
        theorem_normalization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Series,
    MonteCarlo,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Series => "series",
            Method::MonteCarlo => "monte_carlo",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvergenceParams {
    pub n_reps: usize,
    pub master_seed: u64,
    pub study: StudyOptions,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        Self { n_reps: 100_000, master_seed: 0, study: StudyOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub t: f64,
    pub normalized_variance: f64,
    pub stderr: f64,
    pub method: Method,
}

/// (t, t/2 · Var β̂(t)) for β = 1 or (t, Var β̂(t)) for β < 1.
///
/// The series rows carry the truncation remainder bound as `stderr`; the
/// Monte Carlo rows use the limit-convention variance, the sampling
/// counterpart of the series, with its standard error.
pub fn theorem_convergence_table(
    m: &BranchingModel,
    t_grid: &[f64],
    method: Method,
    params: &ConvergenceParams,
) -> Result<Vec<ConvergenceRow>> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty t grid".into()));
    }
    let norm = |t: f64| if m.is_critical() { t / 2.0 } else { 1.0 };
    match method {
        Method::Series => Ok(exact_variance_series_grid(m, t_grid, &params.study.tables)?
            .into_iter()
            .map(|s| ConvergenceRow {
                t: s.t,
                normalized_variance: norm(s.t) * s.value,
                stderr: norm(s.t) * s.remainder_bound,
                method,
            })
            .collect()),
        Method::MonteCarlo => {
            let study = StudyOptions { with_series: false, ..params.study };
            t_grid
                .iter()
                .map(|&t| {
                    let r = mc_study(m, 1, t, params.n_reps, params.master_seed, &study)?;
                    Ok(ConvergenceRow {
                        t,
                        normalized_variance: norm(t) * r.limit_convention_variance,
                        stderr: norm(t) * r.se_limit_convention_variance,
                        method,
                    })
                })
                .collect()
        }
    }
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("t,normalized_variance,stderr,method\n");
    for r in rows {
        let _ = writeln!(out, "{:?},{:?},{:?},{}", r.t, r.normalized_variance, r.stderr, r.method);
    }
    out
}
