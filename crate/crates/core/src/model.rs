//! Branching model: intensities {a_k}, the infinitesimal generating function
//! f(x) = Σ a_k x^k, and the structural parameters derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Grid step used to bracket the extinction root.
pub const ROOT_SCAN_STEP: f64 = 1e-3;
/// Default bisection tolerance for the extinction root.
pub const ROOT_TOL: f64 = 1e-12;
/// Default absolute tolerance on the conservation identity a_1 = -Σ_{k≠1} a_k.
pub const INTENSITY_TOL: f64 = 1e-9;
/// Half-width of the neighbourhood in which removable singularities are
/// replaced by their Taylor expansion.
pub const SINGULARITY_WINDOW: f64 = 1e-4;

/// Branching intensities a_0, a_1, ..., a_{K_max}.
///
/// After construction `a_1` is stored as exactly `-Σ_{k≠1} a_k`, so that
/// f(1) = 0 holds to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityVector {
    a: Vec<f64>,
}

impl IntensityVector {
    pub fn new(mut a: Vec<f64>, tol: f64) -> Result<Self> {
        while a.len() > 2 && a.last() == Some(&0.0) {
            a.pop();
        }
        if a.len() < 2 {
            return Err(Error::InvalidIntensities("need at least a_0 and a_1".into()));
        }
        if let Some(k) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidIntensities(format!("a_{k} is not finite")));
        }
        if a[0] == 0.0 {
            return Err(Error::DegenerateModel("a_0 = 0: no particle ever dies".into()));
        }
        if a[0] < 0.0 {
            return Err(Error::InvalidIntensities(format!("a_0 = {} must be positive", a[0])));
        }
        if a[1] >= 0.0 {
            return Err(Error::InvalidIntensities(format!("a_1 = {} must be negative", a[1])));
        }
        for (k, &v) in a.iter().enumerate().skip(2) {
            if v < 0.0 {
                return Err(Error::InvalidIntensities(format!("a_{k} = {v} must be non-negative")));
            }
        }
        let rest: f64 = a.iter().enumerate().filter(|(k, _)| *k != 1).map(|(_, v)| v).sum();
        if (a[1] + rest).abs() > tol {
            return Err(Error::InvalidIntensities(format!(
                "a_1 = {} must equal -sum_(k!=1) a_k = {} (tolerance {tol:e})",
                a[1], -rest
            )));
        }
        if a.iter().skip(2).all(|&v| v == 0.0) {
            return Err(Error::DegenerateModel("pure death process: a_k = 0 for every k >= 2".into()));
        }
        a[1] = -rest;
        Ok(Self { a })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn get(&self, k: usize) -> f64 {
        self.a.get(k).copied().unwrap_or(0.0)
    }

    /// Largest offspring count with a nonzero intensity.
    pub fn k_max(&self) -> usize {
        self.a.len() - 1
    }

    /// Total event rate of a single particle, -a_1.
    pub fn event_rate(&self) -> f64 {
        -self.a[1]
    }

    /// n-th derivative of f at x.
    pub fn derivative(&self, n: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for k in (n..self.a.len()).rev() {
            let falling: f64 = (0..n).map(|i| (k - i) as f64).product();
            acc = acc * x + falling * self.a[k];
        }
        acc
    }

    pub fn f(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    pub fn df(&self, x: f64) -> f64 {
        self.derivative(1, x)
    }

    pub fn d2f(&self, x: f64) -> f64 {
        self.derivative(2, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

impl std::fmt::Display for Criticality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Criticality::Subcritical => "subcritical",
            Criticality::Critical => "critical",
            Criticality::Supercritical => "supercritical",
        };
        f.write_str(s)
    }
}

/// A validated branching model with its structural parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingModel {
    intensities: IntensityVector,
    tol: f64,
    q: f64,
    ln_beta: f64,
    b: f64,
    criticality: Criticality,
}

impl BranchingModel {
    pub fn intensities(&self) -> &IntensityVector {
        &self.intensities
    }

    pub fn a(&self, k: usize) -> f64 {
        self.intensities.get(k)
    }

    pub fn k_max(&self) -> usize {
        self.intensities.k_max()
    }

    /// Extinction probability of a single particle.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Structural parameter β = exp{f'(q)}.
    pub fn beta(&self) -> f64 {
        self.ln_beta.exp()
    }

    /// ln β = f'(q); exactly zero for a critical model.
    pub fn ln_beta(&self) -> f64 {
        self.ln_beta
    }

    /// β^t, evaluated as exp(t ln β).
    pub fn beta_pow(&self, t: f64) -> f64 {
        (t * self.ln_beta).exp()
    }

    /// First moment b = g'(1-) = q f''(q) of the Q-process generating function.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// γ = b / |ln β|, defined only when β < 1.
    pub fn gamma(&self) -> Option<f64> {
        (!self.is_critical()).then(|| self.b / self.ln_beta.abs())
    }

    pub fn criticality(&self) -> Criticality {
        self.criticality
    }

    pub fn is_critical(&self) -> bool {
        self.criticality == Criticality::Critical
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn f(&self, x: f64) -> f64 {
        self.intensities.f(x)
    }

    pub fn df(&self, x: f64) -> f64 {
        self.intensities.df(x)
    }

    /// E_1 W(1): mean of the Q-process at time 1 started from one particle.
    pub fn mean_w1(&self) -> f64 {
        match self.gamma() {
            None => self.b + 1.0,
            Some(g) => 1.0 + g * (1.0 - self.beta()),
        }
    }
}

/// Validates the intensities and computes q, β, b, γ and the criticality class.
pub fn build_model(a: IntensityVector, tol: f64) -> Result<BranchingModel> {
    // Re-validating keeps `build_model` idempotent on an already normalized vector.
    let a = IntensityVector::new(a.a, tol)?;
    let slope_at_one = a.df(1.0);
    let scale = a.event_rate();
    let criticality = if slope_at_one.abs() <= tol * scale {
        Criticality::Critical
    } else if slope_at_one < 0.0 {
        Criticality::Subcritical
    } else {
        Criticality::Supercritical
    };
    let (q, ln_beta) = match criticality {
        Criticality::Critical => (1.0, 0.0),
        Criticality::Subcritical => (1.0, slope_at_one),
        Criticality::Supercritical => {
            let q = extinction_root(|x| a.f(x), ROOT_TOL);
            if q >= 1.0 {
                return Err(Error::DegenerateModel(format!(
                    "f'(1) = {slope_at_one:e} > 0 but no root of f found in [0, 1)"
                )));
            }
            (q, a.df(q))
        }
    };
    let b = q * a.d2f(q);
    Ok(BranchingModel { intensities: a, tol, q, ln_beta, b, criticality })
}

/// Convenience constructor from raw intensities with the default tolerance.
pub fn model_from(a: &[f64]) -> Result<BranchingModel> {
    build_model(IntensityVector::new(a.to_vec(), INTENSITY_TOL)?, INTENSITY_TOL)
}

/// Smallest root of `f` in [0, 1].
///
/// Scans a fixed grid for a sign change and bisects the first bracket; when f
/// stays positive on [0, 1) the root is 1. Points accumulating geometrically at
/// 1 are probed as well so a root just below 1 is not missed.
pub fn extinction_root<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    let n = (1.0 / ROOT_SCAN_STEP).round() as usize;
    let mut lo = 0.0;
    let mut bracket = None;
    for k in 1..n {
        let x = k as f64 / n as f64;
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            bracket = Some((lo, x));
            break;
        }
        lo = x;
    }
    if bracket.is_none() {
        let mut gap = ROOT_SCAN_STEP;
        for _ in 0..40 {
            gap *= 0.5;
            let x = 1.0 - gap;
            if f(x) < 0.0 {
                bracket = Some((lo, x));
                break;
            }
            lo = x;
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return 1.0;
    };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Local transition densities of the Q-process, p_j for j >= 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QProcessDensities {
    p: Vec<f64>,
}

impl QProcessDensities {
    /// p_j; zero for j = 0 and beyond the support.
    pub fn p(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.p.get(j - 1).copied().unwrap_or(0.0)
        }
    }

    pub fn k_max(&self) -> usize {
        self.p.len()
    }

    /// (j, p_j) for j = 1..=K_max.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.p.iter().enumerate().map(|(i, &v)| (i + 1, v))
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }

    /// g(x) = Σ p_j x^j.
    pub fn g(&self, x: f64) -> f64 {
        self.p.iter().rev().fold(0.0, |acc, &p| acc * x + p) * x
    }
}

/// p_1 = a_1 - ln β, p_j = j q^{j-1} a_j for j >= 2.
pub fn qprocess_densities(m: &BranchingModel) -> QProcessDensities {
    let p = (1..=m.k_max())
        .map(|j| {
            if j == 1 {
                m.a(1) - m.ln_beta
            } else {
                j as f64 * m.q.powi(j as i32 - 1) * m.a(j)
            }
        })
        .collect();
    QProcessDensities { p }
}

/// Harris-Sevastyanov transform f_q(x) = f(qx)/q, i.e. a_k -> q^{k-1} a_k.
///
/// The result has extinction root 1 and f_q'(1) = ln β; a model with q = 1 is
/// returned unchanged.
pub fn harris_sevastyanov(m: &BranchingModel) -> BranchingModel {
    if m.q == 1.0 {
        return m.clone();
    }
    let a: Vec<f64> = m
        .intensities
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &v)| v * m.q.powi(k as i32 - 1))
        .collect();
    let rest: f64 = a.iter().enumerate().filter(|(k, _)| *k != 1).map(|(_, v)| v).sum();
    let mut a = a;
    a[1] = -rest;
    let intensities = IntensityVector { a };
    let b = intensities.d2f(1.0);
    BranchingModel {
        intensities,
        tol: m.tol,
        q: 1.0,
        ln_beta: m.ln_beta,
        b,
        criticality: Criticality::Subcritical,
    }
}

/// Integrand of the limit constant: 1/(s-q) - f'(q)/f(s), with its Taylor
/// expansion substituted inside the singularity window around s = q.
pub fn kolmogorov_integrand(m: &BranchingModel, s: f64) -> f64 {
    let q = m.q;
    let d = s - q;
    let f1 = m.ln_beta;
    if d.abs() < SINGULARITY_WINDOW {
        let a = m.intensities.derivative(2, q) / (2.0 * f1);
        let c = m.intensities.derivative(3, q) / (6.0 * f1);
        a + (c - a * a) * d
    } else {
        1.0 / d - f1 / m.f(s)
    }
}

/// Limit constant 𝒜 = q exp{∫_0^q [1/(s-q) - f'(q)/f(s)] ds}.
pub fn kolmogorov_constant(m: &BranchingModel, quad_tol: f64) -> Result<f64> {
    if m.is_critical() {
        return Err(Error::NotDefinedForCritical("kolmogorov_constant"));
    }
    let r = quad::integrate(|s| kolmogorov_integrand(m, s), 0.0, m.q, quad_tol, quad_tol);
    Ok(m.q * r.value.exp())
}
