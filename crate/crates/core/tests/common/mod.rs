//! Oracles and checks shared by the integration test targets. Nothing here
//! calls into the quadrature, ODE or root-finding code under test.

#![allow(dead_code)]

use proptest::prelude::*;
use qbranch::numerics::{phi, qprocess_transition_probs, default_j_max, TableOptions};
use qbranch::simulate::{replicate_rng, simulate_qprocess, Process, SimOptions};
use qbranch::{model_from, BranchingModel};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const CRITICAL: [f64; 3] = [0.5, -1.0, 0.5];
pub const SUPERCRITICAL: [f64; 3] = [0.5, -1.5, 1.0];
pub const SUBCRITICAL: [f64; 3] = [1.0, -1.5, 0.5];

pub fn crit() -> BranchingModel {
    model_from(&CRITICAL).unwrap()
}
pub fn sup() -> BranchingModel {
    model_from(&SUPERCRITICAL).unwrap()
}
pub fn sub() -> BranchingModel {
    model_from(&SUBCRITICAL).unwrap()
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// Composite Gauss-Legendre rule with `panels` equal panels.
pub fn composite_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            x.iter().zip(&w).map(|(xi, wi)| wi * f(mid + 0.5 * h * xi)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

/// Divides the ascending-coefficient polynomial `c` by (s - r); returns the
/// quotient and the remainder.
pub fn synthetic_division(c: &[f64], r: f64) -> (Vec<f64>, f64) {
    let n = c.len() - 1;
    let mut quot = vec![0.0; n];
    let mut carry = 0.0;
    for k in (1..=n).rev() {
        carry = c[k] + r * carry;
        quot[k - 1] = carry;
    }
    (quot, c[0] + r * carry)
}

pub fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// 𝒜 for intensities `a` with extinction root `q`, integrating the smooth
/// rational function h/r where f = (s - q) r and f - f'(q)(s - q) = (s - q)² h.
pub fn kolmogorov_oracle(a: &[f64], q: f64) -> f64 {
    let df_q: f64 = a.iter().enumerate().skip(1).map(|(k, ak)| k as f64 * ak * q.powi(k as i32 - 1)).sum();
    let (r, _) = synthetic_division(a, q);
    let mut g = a.to_vec();
    g[0] += df_q * q;
    g[1] -= df_q;
    let (g1, _) = synthetic_division(&g, q);
    let (h, _) = synthetic_division(&g1, q);
    let integral = composite_gl(|s| poly(&h, s) / poly(&r, s), 0.0, q, 64, 20);
    q * integral.exp()
}

/// P_1j(t) of a linear birth-death process (birth λ, death μ, λ != μ), j = 0..=j_max.
pub fn linear_bd(lambda: f64, mu: f64, t: f64, j_max: usize) -> Vec<f64> {
    let e = ((lambda - mu) * t).exp();
    let alpha = mu * (e - 1.0) / (lambda * e - mu);
    let eta = lambda * (e - 1.0) / (lambda * e - mu);
    let mut p = vec![alpha];
    p.extend((1..=j_max).map(|j| (1.0 - alpha) * (1.0 - eta) * eta.powi(j as i32 - 1)));
    p
}

/// P_1j(t) for the critical model f(x) = (1 - x)²/2.
pub fn critical_bd(t: f64, j_max: usize) -> Vec<f64> {
    let u = t / 2.0;
    let mut p = vec![u / (1.0 + u)];
    p.extend((1..=j_max).map(|j| u.powi(j as i32 - 1) / (1.0 + u).powi(j as i32 + 1)));
    p
}

/// Σ_{k>=1} z^k / k² for 0 <= z < 1.
pub fn dilog(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut zk = 1.0;
    for k in 1..1_000_000 {
        zk *= z;
        let term = zk / (k * k) as f64;
        sum += term;
        if term < 1e-18 {
            break;
        }
    }
    sum
}

/// Var β̂(t) for the critical model in closed form, u = t/2, z = u/(1+u).
///
/// Here Q_{1,k+1} = (k+1) z^k / (1+u)² and Var_{k+1}W(1) = k + 3/2, so the
/// series is Σ_k (k+1)(k+3/2) z^k / k² / (1+u)².
pub fn critical_series_closed_form(t: f64) -> f64 {
    let u = t / 2.0;
    (u + 2.5 * (1.0 + u).ln() + 1.5 * dilog(u / (1.0 + u))) / (1.0 + u).powi(2)
}

/// Pearson chi-square of observed counts against probabilities `p` (whose
/// complement is the last, open-ended bin), pooling adjacent bins until each
/// expects at least 5. Returns (statistic, degrees of freedom, p-value).
pub fn chi_square(counts: &[u64], p: &[f64]) -> (f64, usize, f64) {
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mut bins: Vec<(f64, f64)> = vec![];
    let (mut obs, mut exp) = (0.0, 0.0);
    let mut used_p = 0.0;
    let mut used_c = 0;
    for (j, &pj) in p.iter().enumerate() {
        let cj = counts.get(j).copied().unwrap_or(0);
        obs += cj as f64;
        exp += nf * pj;
        used_p += pj;
        used_c += cj;
        if exp >= 5.0 && nf * (1.0 - used_p) >= 5.0 {
            bins.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    obs += (n - used_c) as f64;
    exp += nf * (1.0 - used_p).max(0.0);
    bins.push((obs, exp));
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = bins.len() - 1;
    let pval = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, df, pval)
}

pub fn histogram(values: impl IntoIterator<Item = u64>) -> Vec<u64> {
    let mut h = vec![];
    for v in values {
        let v = v as usize;
        if v >= h.len() {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

/// Random valid intensity vectors with K_max in 2..=4; about a quarter are
/// exactly critical (a_0 = Σ_{k>=2} (k-1) a_k).
pub fn intensities() -> impl Strategy<Value = Vec<f64>> {
    (0.05f64..1.5, 0.05f64..1.0, 0.0f64..0.6, 0.0f64..0.4, 0u8..4).prop_map(|(a0, a2, a3, a4, kind)| {
        let a0 = if kind == 0 { a2 + 2.0 * a3 + 3.0 * a4 } else { a0 };
        let a1 = -(a0 + a2 + a3 + a4);
        vec![a0, a1, a2, a3, a4]
    })
}

pub fn check_fixed_points(m: &BranchingModel, t: f64) -> Result<(), String> {
    let one = phi(m, t, 1.0, 1e-11).map_err(|e| e.to_string())?;
    let q = phi(m, t, m.q(), 1e-11).map_err(|e| e.to_string())?;
    if (one - 1.0).abs() > 1e-9 || (q - m.q()).abs() > 1e-7 {
        return Err(format!("Φ(t;1) = {one}, Φ(t;q) = {q} vs q = {}", m.q()));
    }
    Ok(())
}

pub fn check_semigroup(m: &BranchingModel, t: f64, s: f64, x: f64) -> Result<(), String> {
    let e = |e: qbranch::Error| e.to_string();
    let whole = phi(m, t + s, x, 1e-12).map_err(e)?;
    let inner = phi(m, s, x, 1e-12).map_err(e)?;
    let composed = phi(m, t, inner.clamp(0.0, 1.0), 1e-12).map_err(e)?;
    if (whole - composed).abs() > 1e-8 {
        return Err(format!("Φ(t+s) = {whole}, Φ(t;Φ(s)) = {composed}"));
    }
    Ok(())
}

pub fn check_densities_conservative(m: &BranchingModel) -> Result<(), String> {
    let p = qbranch::model::qprocess_densities(m);
    if p.sum().abs() > 1e-9 || p.p(1) >= 0.0 || (2..=p.k_max()).any(|j| p.p(j) < 0.0) {
        return Err(format!("densities {:?} sum {}", p.iter().collect::<Vec<_>>(), p.sum()));
    }
    Ok(())
}

pub fn check_q_rows_sum_to_one(m: &BranchingModel, i: usize, t: f64) -> Result<(), String> {
    let tab = qprocess_transition_probs(m, i, t, default_j_max(m, i, t), &TableOptions::default())
        .map_err(|e| e.to_string())?;
    if (tab.total() - 1.0).abs() > 1e-8 || tab.prob(0) != 0.0 {
        return Err(format!("Σ_j Q_{i}j({t}) = {}", tab.total()));
    }
    Ok(())
}

pub fn check_qprocess_avoids_zero(m: &BranchingModel, i0: u64, seed: u64) -> Result<(), String> {
    let mut rng = replicate_rng(seed, 0);
    let traj = simulate_qprocess(m, i0, 5.0, &mut rng, &SimOptions { state_cap: 100_000 }).map_err(|e| e.to_string())?;
    if !traj.is_legal(m, Process::QProcess) {
        return Err(format!("illegal path from {i0}: {:?}", traj.states));
    }
    Ok(())
}

pub fn check_seed_determinism(m: &BranchingModel, seed: u64) -> Result<(), String> {
    let run = || {
        qbranch::simulate::run_replicates(16, seed, |_, rng| {
            simulate_qprocess(m, 2, 3.0, rng, &SimOptions::default()).unwrap().to_csv()
        })
        .concat()
    };
    let (a, b) = (run(), run());
    if a.as_bytes() != b.as_bytes() {
        return Err("two runs with the same seed differ".into());
    }
    Ok(())
}
