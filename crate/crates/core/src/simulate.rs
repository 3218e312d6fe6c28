//! Exact event-driven simulation of the branching system Z(t) and of its
//! Q-process W(t).
//!
//! # Q-process jump rates
//!
//! The Q-process is specified through its transition function
//! Q_ij(t) = j q^{j-i} P_ij(t) / (i β^t). Differentiating at t = 0 with
//! P_ij(ε) = δ_ij + q_ij ε + o(ε), where q_ij is the branching q-matrix
//! (q_{i,i-1} = i a_0, q_{i,i+m} = i a_{m+1}), gives for j ≠ i
//!
//! ```text
//! rate(i -> i-1) = (i-1) q^{-1} / i * i a_0      = (i-1) a_0 / q
//! rate(i -> i+m) = (i+m) q^{m}  / i * i a_{m+1}  = (i+m) q^m a_{m+1}
//! ```
//!
//! and the diagonal i a_1 - ln β. Using f(q) = 0 and f'(q) = ln β one checks
//! that the off-diagonal rates sum to -(i a_1 - ln β), so the rows are
//! conservative. From state 1 the downward rate is zero, hence 0 is never
//! visited.
//!
//! # Random streams
//!
//! Replicate `k` under master seed `s` draws from a ChaCha8 generator seeded
//! with `seed_from_u64(s)` and switched to stream `k` (see [`replicate_rng`]).
//! Streams are independent of thread count and execution order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BranchingModel;

pub const DEFAULT_STATE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Process {
    /// The branching system Z(t).
    Branching,
    /// The Q-process W(t).
    QProcess,
}

/// Random stream of replicate `index` under `master_seed`.
pub fn replicate_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Runs `job` for replicates `0..n` in parallel; results are in replicate order.
pub fn run_replicates<T, F>(n: usize, master_seed: u64, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(master_seed, k);
            job(k, &mut rng)
        })
        .collect()
}

/// Piecewise-constant, right-continuous sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_state: u64,
    /// Strictly increasing jump times in (0, horizon].
    pub jump_times: Vec<f64>,
    /// State entered at the matching jump time.
    pub states: Vec<u64>,
    pub horizon: f64,
    /// Set when the population hit the state cap; the path stops there.
    pub overflowed: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> u64 {
        self.states.last().copied().unwrap_or(self.initial_state)
    }

    /// Visits every state including the initial one.
    pub fn visited(&self) -> impl Iterator<Item = u64> + '_ {
        std::iter::once(self.initial_state).chain(self.states.iter().copied())
    }

    /// Checks that every transition is -1 or +m with a_{m+1} > 0, that time is
    /// strictly increasing within the horizon, and (for the Q-process) that 0
    /// is never visited.
    pub fn is_legal(&self, m: &BranchingModel, process: Process) -> bool {
        if self.jump_times.len() != self.states.len() {
            return false;
        }
        let mut prev_t = 0.0;
        for &t in &self.jump_times {
            if !(t > prev_t && t <= self.horizon) {
                return false;
            }
            prev_t = t;
        }
        let mut prev = self.initial_state;
        for &s in &self.states {
            let ok = if s + 1 == prev {
                true
            } else if s > prev {
                m.a((s - prev) as usize + 1) > 0.0
            } else {
                false
            };
            if !ok || (process == Process::Branching && prev == 0) {
                return false;
            }
            prev = s;
        }
        process == Process::Branching || self.visited().all(|s| s > 0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,state\n");
        out.push_str(&format!("0,{}\n", self.initial_state));
        for (t, s) in self.jump_times.iter().zip(&self.states) {
            out.push_str(&format!("{t},{s}\n"));
        }
        out
    }
}

/// States at the given sorted times, with the right-continuous convention.
pub fn state_at(traj: &Trajectory, times: &[f64]) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(times.len());
    let mut k = 0;
    let mut prev = f64::NEG_INFINITY;
    for &t in times {
        if !(0.0..=traj.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { time: t, horizon: traj.horizon });
        }
        if t < prev {
            return Err(Error::InvalidArgument("evaluation times must be sorted".into()));
        }
        prev = t;
        while k < traj.jump_times.len() && traj.jump_times[k] <= t {
            k += 1;
        }
        out.push(if k == 0 { traj.initial_state } else { traj.states[k - 1] });
    }
    Ok(out)
}

/// State-dependent jump rates of the Q-process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QProcessRates {
    /// a_0 / q: the downward rate from i is (i-1) times this.
    down: f64,
    /// (m, q^m a_{m+1}) for upward jumps by m with a_{m+1} > 0.
    up: Vec<(u64, f64)>,
}

impl QProcessRates {
    pub fn new(m: &BranchingModel) -> Self {
        let q = m.q();
        let up = (1..m.k_max() as u64)
            .filter_map(|step| {
                let a = m.a(step as usize + 1);
                (a > 0.0).then(|| (step, q.powi(step as i32) * a))
            })
            .collect();
        Self { down: m.a(0) / q, up }
    }

    /// Rate of the jump i -> j (j ≠ i).
    pub fn rate(&self, i: u64, j: u64) -> f64 {
        if j + 1 == i {
            (i - 1) as f64 * self.down
        } else if j > i {
            self.up.iter().find(|(m, _)| *m == j - i).map_or(0.0, |(m, c)| (i + m) as f64 * c)
        } else {
            0.0
        }
    }

    /// Total exit rate R_i.
    pub fn total(&self, i: u64) -> f64 {
        (i - 1) as f64 * self.down + self.up.iter().map(|(m, c)| (i + m) as f64 * c).sum::<f64>()
    }

    fn sample_jump<R: Rng + ?Sized>(&self, i: u64, total: f64, rng: &mut R) -> u64 {
        let mut u = rng.random::<f64>() * total;
        let down = (i - 1) as f64 * self.down;
        if u < down {
            return i - 1;
        }
        u -= down;
        for &(m, c) in &self.up {
            let r = (i + m) as f64 * c;
            if u < r {
                return i + m;
            }
            u -= r;
        }
        // Rounding left u at the very top of the range.
        i + self.up.last().map_or(0, |(m, _)| *m)
    }
}

/// Per-particle event rate and jump law of the branching system.
#[derive(Debug, Clone)]
struct BranchingRates {
    event_rate: f64,
    /// (offspring k, a_k) for k ≠ 1 with a_k > 0.
    outcomes: Vec<(u64, f64)>,
}

impl BranchingRates {
    fn new(m: &BranchingModel) -> Self {
        let outcomes = (0..=m.k_max() as u64)
            .filter(|&k| k != 1 && m.a(k as usize) > 0.0)
            .map(|k| (k, m.a(k as usize)))
            .collect();
        Self { event_rate: -m.a(1), outcomes }
    }

    fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let mut u = rng.random::<f64>() * self.event_rate;
        for &(k, a) in &self.outcomes {
            if u < a {
                return k;
            }
            u -= a;
        }
        self.outcomes.last().expect("at least a_0 > 0").0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub state_cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { state_cap: DEFAULT_STATE_CAP }
    }
}

fn exp_sample<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the logarithm is finite.
    -(1.0 - rng.random::<f64>()).ln() / rate
}

fn check_args(i0: u64, horizon: f64) -> Result<()> {
    if i0 == 0 {
        return Err(Error::InvalidArgument("initial state must be >= 1".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive and finite")));
    }
    Ok(())
}

/// Exact path of Z(t) on [0, horizon], absorbed at 0.
pub fn simulate_mbs<R: Rng + ?Sized>(
    m: &BranchingModel,
    i0: u64,
    horizon: f64,
    rng: &mut R,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_args(i0, horizon)?;
    let rates = BranchingRates::new(m);
    let mut traj = Trajectory { initial_state: i0, jump_times: vec![], states: vec![], horizon, overflowed: false };
    let mut t = 0.0;
    let mut z = i0;
    while z > 0 {
        t += exp_sample(rng, z as f64 * rates.event_rate);
        if t > horizon {
            break;
        }
        let k = rates.sample_offspring(rng);
        z = z - 1 + k;
        traj.jump_times.push(t);
        traj.states.push(z);
        if z > opts.state_cap {
            traj.overflowed = true;
            break;
        }
    }
    Ok(traj)
}

/// Exact path of W(t) on [0, horizon] driven by [`QProcessRates`].
pub fn simulate_qprocess<R: Rng + ?Sized>(
    m: &BranchingModel,
    i0: u64,
    horizon: f64,
    rng: &mut R,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_args(i0, horizon)?;
    simulate_qprocess_with(&QProcessRates::new(m), i0, horizon, rng, opts)
}

/// As [`simulate_qprocess`], reusing precomputed rates.
pub fn simulate_qprocess_with<R: Rng + ?Sized>(
    rates: &QProcessRates,
    i0: u64,
    horizon: f64,
    rng: &mut R,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_args(i0, horizon)?;
    let mut traj = Trajectory { initial_state: i0, jump_times: vec![], states: vec![], horizon, overflowed: false };
    let mut t = 0.0;
    let mut w = i0;
    loop {
        let total = rates.total(w);
        if total <= 0.0 {
            break;
        }
        t += exp_sample(rng, total);
        if t > horizon {
            break;
        }
        w = rates.sample_jump(w, total, rng);
        traj.jump_times.push(t);
        traj.states.push(w);
        if w > opts.state_cap {
            traj.overflowed = true;
            break;
        }
    }
    Ok(traj)
}

/// Simulates `n` replicates and reads each path at `times`.
///
/// Fails with [`Error::StateOverflow`] if any replicate hits the cap.
pub fn sample_states(
    m: &BranchingModel,
    process: Process,
    i0: u64,
    times: &[f64],
    n: usize,
    master_seed: u64,
    opts: &SimOptions,
) -> Result<Vec<Vec<u64>>> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    check_args(i0, horizon)?;
    let qrates = QProcessRates::new(m);
    let rows = run_replicates(n, master_seed, |_, rng| -> Result<Vec<u64>> {
        let traj = match process {
            Process::Branching => simulate_mbs(m, i0, horizon, rng, opts)?,
            Process::QProcess => simulate_qprocess_with(&qrates, i0, horizon, rng, opts)?,
        };
        if traj.overflowed {
            return Err(Error::StateOverflow { cap: opts.state_cap });
        }
        state_at(&traj, times)
    });
    rows.into_iter().collect()
}
