//! Generating-function numerics: Φ(t;x), transition tables of the branching
//! system and of its Q-process, closed-form moments and limit constants.
//!
//! Transition probabilities P_1j(t) come from the truncated forward Kolmogorov
//! system. Q-process tables use the identity
//!
//! ```text
//! Q_ij(t) = j q^{j-i} P_ij(t) / (i β^t) = j P^{(q)}_ij(t) / (i β^t)
//! ```
//!
//! where P^{(q)} belongs to the Harris-Sevastyanov transform of the model. The
//! factor β^{-t} is carried inside the ODE (R_j = P^{(q)}_1j e^{-t ln β}), so the
//! tables stay O(1) even when P_1j(t) itself is exponentially small.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{harris_sevastyanov, kolmogorov_constant, BranchingModel, SINGULARITY_WINDOW};
use crate::ode::{self, Dopri5, OdeOptions};
use crate::quad;

pub const DEFAULT_ODE_TOL: f64 = 1e-10;
pub const DEFAULT_QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOptions {
    /// Relative tolerance of the forward-system integration.
    pub ode_tol: f64,
    /// Largest acceptable truncation mass.
    pub max_truncation: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self { ode_tol: DEFAULT_ODE_TOL, max_truncation: 1e-8 }
    }
}

impl TableOptions {
    fn ode(&self) -> OdeOptions {
        OdeOptions { rtol: self.ode_tol, atol: self.ode_tol * 1e-6, max_steps: 50_000_000 }
    }

    fn drift_tol(&self) -> f64 {
        (100.0 * self.ode_tol).max(1e-9)
    }
}

/// Truncated probability vector P_ij(t) or Q_ij(t), j = 0..=J_max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub t: f64,
    pub base_state: usize,
    pub probs: Vec<f64>,
    pub truncation_mass: f64,
}

impl TransitionTable {
    pub fn j_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn prob(&self, j: usize) -> f64 {
        self.probs.get(j).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Σ_j j^n probs_j
    pub fn raw_moment(&self, n: i32) -> f64 {
        self.probs.iter().enumerate().map(|(j, p)| (j as f64).powi(n) * p).sum()
    }

    /// Mean and variance of the (truncated, unnormalized) table via the
    /// first two factorial moments.
    pub fn moments(&self) -> MomentPair {
        let m1 = self.raw_moment(1);
        let f2: f64 = self.probs.iter().enumerate().map(|(j, p)| (j as f64) * (j as f64 - 1.0) * p).sum();
        MomentPair { mean: m1, variance: f2 + m1 - m1 * m1 }
    }

    /// Σ_j probs_j x^j
    pub fn gf(&self, x: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, &p| acc * x + p)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# t={}, base_state={}, truncation_mass={:e}", self.t, self.base_state, self.truncation_mass);
        out.push_str("j,prob\n");
        for (j, p) in self.probs.iter().enumerate() {
            let _ = writeln!(out, "{j},{p:?}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub mean: f64,
    pub variance: f64,
}

/// J_max = max(K_max, ceil(20 (i + b t))).
pub fn default_j_max(m: &BranchingModel, i: usize, t: f64) -> usize {
    m.k_max().max((20.0 * (i as f64 + m.b() * t)).ceil() as usize)
}

/// Φ(t;x) = Σ_j P_1j(t) x^j, from dΦ/dt = f(Φ), Φ(0;x) = x.
pub fn phi(m: &BranchingModel, t: f64, x: f64, ode_tol: f64) -> Result<f64> {
    check_unit(x)?;
    check_time(t)?;
    let mut y = vec![x];
    let opts = OdeOptions { rtol: ode_tol, atol: ode_tol * 1e-3, max_steps: 10_000_000 };
    ode::solve(|_, y, dy| dy[0] = m.f(y[0]), 0.0, t, &mut y, opts)?;
    Ok(y[0])
}

fn check_unit(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("x = {x} outside [0, 1]")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time t = {t} must be finite and non-negative")));
    }
    Ok(())
}

/// Right-hand side of the truncated forward system for one particle.
///
/// State layout: `y[0] = P_10`, `y[j] = P_1j e^{-s t}` for `1 <= j <= J`,
/// `y[J+1]` = scaled mass that left through the truncation boundary.
struct ForwardSystem<'a> {
    a: &'a [f64],
    j_max: usize,
    scale: f64,
}

impl ForwardSystem<'_> {
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let a = self.a;
        let jm = self.j_max;
        let k = a.len();
        dy[0] = a[0] * (self.scale * t).exp() * y[1];
        let mut lost = 0.0;
        for j in 1..=jm {
            let mut acc = -self.scale * y[j];
            if j < jm {
                acc += (j + 1) as f64 * a[0] * y[j + 1];
            }
            // Parents i = j - m jumping by m, with intensity a_{m+1}.
            for m in 0..(k - 1).min(j) {
                let i = j - m;
                acc += i as f64 * a[m + 1] * y[i];
            }
            dy[j] = acc;
            // Jumps from j that land beyond the boundary.
            let first = (jm - j + 1).max(1);
            for m in first..k - 1 {
                lost += j as f64 * a[m + 1] * y[j];
            }
        }
        dy[jm + 1] = lost;
    }
}

struct ForwardSnapshot {
    p10: f64,
    scaled: Vec<f64>,
    lost: f64,
}

fn forward_sweep(m: &BranchingModel, ts: &[f64], j_max: usize, scale: f64, opts: &TableOptions) -> Result<Vec<ForwardSnapshot>> {
    if j_max < m.k_max() {
        return Err(Error::InvalidArgument(format!("j_max = {j_max} is below K_max = {}", m.k_max())));
    }
    for w in ts.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidArgument("time grid must be sorted".into()));
        }
    }
    for &t in ts {
        check_time(t)?;
    }
    let sys = ForwardSystem { a: m.intensities().as_slice(), j_max, scale };
    let mut y0 = vec![0.0; j_max + 2];
    y0[1] = 1.0;
    let mut solver = Dopri5::new(|t, y: &[f64], dy: &mut [f64]| sys.eval(t, y, dy), 0.0, y0, opts.ode());
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        solver.advance_to(t)?;
        let y = solver.y();
        out.push(ForwardSnapshot { p10: y[0], scaled: y[1..=j_max].to_vec(), lost: y[j_max + 1] });
    }
    Ok(out)
}

/// P_1j(t) for j = 0..=J_max of the branching system itself.
pub fn transition_probs(m: &BranchingModel, t: f64, j_max: usize, opts: &TableOptions) -> Result<TransitionTable> {
    Ok(transition_probs_grid(m, &[t], j_max, opts)?.pop().expect("one table per time"))
}

/// [`transition_probs`] over a sorted time grid in a single integration sweep.
pub fn transition_probs_grid(m: &BranchingModel, ts: &[f64], j_max: usize, opts: &TableOptions) -> Result<Vec<TransitionTable>> {
    let snaps = forward_sweep(m, ts, j_max, 0.0, opts)?;
    ts.iter()
        .zip(snaps)
        .map(|(&t, s)| {
            let mut probs = Vec::with_capacity(j_max + 1);
            probs.push(s.p10);
            probs.extend(s.scaled);
            let total: f64 = probs.iter().sum();
            if (total + s.lost - 1.0).abs() > opts.drift_tol() {
                return Err(Error::NormalizationDrift { total: total + s.lost, tol: opts.drift_tol() });
            }
            if s.lost > opts.max_truncation {
                return Err(Error::TruncationTooSevere { mass: s.lost, bound: opts.max_truncation, j_max });
            }
            Ok(TransitionTable { t, base_state: 1, probs, truncation_mass: s.lost.max(0.0) })
        })
        .collect()
}

/// Discrete convolution of two truncated vectors, cut at `len`.
fn convolve(x: &[f64], y: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &xi) in x.iter().enumerate().take(len) {
        if xi == 0.0 {
            continue;
        }
        for (j, &yj) in y.iter().enumerate().take(len - i) {
            out[i + j] += xi * yj;
        }
    }
    out
}

/// P_ij(t) as the i-fold convolution of the one-particle table.
pub fn i_fold_transition(m: &BranchingModel, i: usize, t: f64, j_max: usize, opts: &TableOptions) -> Result<TransitionTable> {
    if i == 0 {
        return Err(Error::InvalidArgument("initial state i must be >= 1".into()));
    }
    let base = transition_probs(m, t, j_max, opts)?;
    if i == 1 {
        return Ok(base);
    }
    let mut acc = base.probs.clone();
    for _ in 1..i {
        acc = convolve(&acc, &base.probs, j_max + 1);
    }
    let total: f64 = acc.iter().sum();
    Ok(TransitionTable { t, base_state: i, probs: acc, truncation_mass: (1.0 - total).max(0.0) })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, r| acc * (n - r) as f64 / (r + 1) as f64)
}

fn qtable_from_snapshot(
    m: &BranchingModel,
    i: usize,
    t: f64,
    snap: &ForwardSnapshot,
    opts: &TableOptions,
) -> Result<TransitionTable> {
    let j_max = snap.scaled.len();
    // Index 0 of `scaled_r` holds R_1; shift to a 0-based j axis.
    let mut r1 = vec![0.0; j_max + 1];
    r1[1..].copy_from_slice(&snap.scaled);
    // P_ij / β^t = Σ_{r=1}^{i} C(i,r) P_10^{i-r} β^{t(r-1)} (R^{*r})_j
    let mut scaled_pij = vec![0.0; j_max + 1];
    let mut power = r1.clone();
    for r in 1..=i {
        if r > 1 {
            power = convolve(&power, &r1, j_max + 1);
        }
        let w = binomial(i, r) * snap.p10.powi((i - r) as i32) * m.beta_pow(t * (r - 1) as f64);
        if w == 0.0 {
            continue;
        }
        for (acc, v) in scaled_pij.iter_mut().zip(&power) {
            *acc += w * v;
        }
    }
    let probs: Vec<f64> = scaled_pij.iter().enumerate().map(|(j, v)| j as f64 * v / i as f64).collect();
    let total: f64 = probs.iter().sum();
    let drift = opts.drift_tol();
    if total > 1.0 + drift || probs.iter().any(|p| *p < -drift) {
        return Err(Error::NormalizationDrift { total, tol: drift });
    }
    let truncation_mass = (1.0 - total).max(0.0);
    if truncation_mass > opts.max_truncation {
        return Err(Error::TruncationTooSevere { mass: truncation_mass, bound: opts.max_truncation, j_max });
    }
    Ok(TransitionTable { t, base_state: i, probs, truncation_mass })
}

/// Q_ij(t) = j q^{j-i} P_ij(t) / (i β^t), j = 0..=J_max (Q_i0 = 0).
pub fn qprocess_transition_probs(
    m: &BranchingModel,
    i: usize,
    t: f64,
    j_max: usize,
    opts: &TableOptions,
) -> Result<TransitionTable> {
    Ok(qprocess_transition_grid(m, i, &[t], j_max, opts)?.pop().expect("one table per time"))
}

/// [`qprocess_transition_probs`] over a sorted time grid in one sweep.
pub fn qprocess_transition_grid(
    m: &BranchingModel,
    i: usize,
    ts: &[f64],
    j_max: usize,
    opts: &TableOptions,
) -> Result<Vec<TransitionTable>> {
    if i == 0 {
        return Err(Error::InvalidArgument("initial state i must be >= 1".into()));
    }
    let transformed = harris_sevastyanov(m);
    let snaps = forward_sweep(&transformed, ts, j_max, m.ln_beta(), opts)?;
    ts.iter().zip(&snaps).map(|(&t, s)| qtable_from_snapshot(m, i, t, s, opts)).collect()
}

/// G_i(t;x) = x [Φ(t;qx)/q]^{i-1} exp{∫_0^t b(Φ(τ;qx)/q) dτ}, b(y) = f'(qy) - f'(q).
///
/// The time integral is carried as an extra ODE component so it shares the
/// step grid of Φ.
pub fn qprocess_gf(m: &BranchingModel, i: usize, t: f64, x: f64, tol: f64) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidArgument("initial state i must be >= 1".into()));
    }
    check_unit(x)?;
    check_time(t)?;
    let q = m.q();
    let ln_beta = m.ln_beta();
    let mut y = vec![q * x, 0.0];
    let opts = OdeOptions { rtol: tol, atol: tol * 1e-3, max_steps: 10_000_000 };
    ode::solve(
        |_, y, dy| {
            dy[0] = m.f(y[0]);
            dy[1] = m.df(y[0]) - ln_beta;
        },
        0.0,
        t,
        &mut y,
        opts,
    )?;
    Ok(x * (y[0] / q).powi(i as i32 - 1) * y[1].exp())
}

/// E_i W(t), closed form.
pub fn mean_w(m: &BranchingModel, i: usize, t: f64) -> f64 {
    let bt = m.beta_pow(t);
    let tail = match m.gamma() {
        None => m.b() * t + 1.0,
        Some(g) => 1.0 + g * (1.0 - bt),
    };
    (i as f64 - 1.0) * bt + tail
}

/// Var_i W(t), closed form.
///
/// Twice differentiating log G_i(t;x) at x = 1 gives
/// (i-1) Var Z_q(t) + E_1 W(t) - 1 + ∫_0^t [c_3 Φ_q'(τ;1)² + b Φ_q''(τ;1)] dτ,
/// where Z_q and Φ_q belong to the transformed model and c_3 = q² f'''(q).
/// The integral is c_3 t + (bt)²/2 when β = 1 and
/// c_3 (1 - β^{2t}) / (2|ln β|) + γ² (1 - β^t)² / 2 when β < 1.
pub fn var_w(m: &BranchingModel, i: usize, t: f64) -> f64 {
    let q = m.q();
    let c3 = q * q * m.intensities().derivative(3, q);
    let b = m.b();
    let i = i as f64;
    match m.gamma() {
        None => b * t * i + c3 * t + 0.5 * (b * t).powi(2),
        Some(g) => {
            let bt = m.beta_pow(t);
            let linear = (g + (i - 1.0) * (1.0 + g) * bt) * (1.0 - bt);
            linear + c3 * (1.0 - bt * bt) / (2.0 * m.ln_beta().abs()) + 0.5 * (g * (1.0 - bt)).powi(2)
        }
    }
}

pub fn moments_w(m: &BranchingModel, i: usize, t: f64) -> MomentPair {
    MomentPair { mean: mean_w(m, i, t), variance: var_w(m, i, t) }
}

/// Limit of t² Q_11(t) (β = 1) or of Q_11(t) (β < 1).
pub fn theorem_a_constant(m: &BranchingModel) -> f64 {
    if m.is_critical() {
        2.0 / (m.b() * m.a(0))
    } else {
        let a = kolmogorov_constant(m, DEFAULT_QUAD_TOL).expect("β < 1 checked above");
        m.ln_beta().abs() * a / m.a(0)
    }
}

/// κ(x) = exp{∫_x^1 [f_q'(s) - f_q'(1-)] / f_q(s) ds}, the β < 1 limit factor of G(t;x)/x.
pub fn kappa(m: &BranchingModel, x: f64, quad_tol: f64) -> Result<f64> {
    if m.is_critical() {
        return Err(Error::NotDefinedForCritical("kappa"));
    }
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::InvalidArgument(format!("x = {x} outside (0, 1]")));
    }
    let fq = harris_sevastyanov(m);
    let v = fq.intensities();
    let f1 = m.ln_beta();
    let f2 = v.derivative(2, 1.0);
    let f3 = v.derivative(3, 1.0);
    let integrand = |s: f64| {
        let d = s - 1.0;
        if d.abs() < SINGULARITY_WINDOW {
            f2 / f1 + d * (f3 / (2.0 * f1) - f2 * f2 / (2.0 * f1 * f1))
        } else {
            (v.df(s) - f1) / v.f(s)
        }
    };
    let r = quad::integrate(integrand, x, 1.0, quad_tol, quad_tol);
    Ok(r.value.exp())
}
