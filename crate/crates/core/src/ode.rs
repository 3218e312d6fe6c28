//! Adaptive Dormand-Prince 5(4) integrator for systems `y' = F(t, y)`.
//!
//! The integrator keeps its state between calls to [`Dopri5::advance_to`], so a
//! sequence of output times can be reached in one sweep without restarting
//! the step-size controller.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        Self { rtol, atol: rtol * 1e-4, max_steps: 50_000_000 }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self::with_rtol(1e-10)
    }
}

pub struct Dopri5<F> {
    rhs: F,
    opts: OdeOptions,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    fsal_ready: bool,
    steps: usize,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(rhs: F, t0: f64, y0: Vec<f64>, opts: OdeOptions) -> Self {
        let n = y0.len();
        let k = std::array::from_fn(|_| vec![0.0; n]);
        Self { rhs, opts, t: t0, y: y0, h: 0.0, k, tmp: vec![0.0; n], fsal_ready: false, steps: 0 }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn weight(&self, a: f64, b: f64) -> f64 {
        self.opts.atol + self.opts.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self, span: f64) -> f64 {
        let n = self.y.len().max(1) as f64;
        let (mut d0, mut d1) = (0.0_f64, 0.0_f64);
        for i in 0..self.y.len() {
            let w = self.weight(self.y[i], self.y[i]);
            d0 += (self.y[i] / w).powi(2);
            d1 += (self.k[0][i] / w).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span.abs()).max(1e-12 * span.abs().max(1.0))
    }

    /// Integrates forward (or backward) to `t_end`, landing on it exactly.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        if t_end == self.t {
            return Ok(());
        }
        let dir = (t_end - self.t).signum();
        let n = self.y.len();
        if !self.fsal_ready {
            (self.rhs)(self.t, &self.y, &mut self.k[0]);
            self.fsal_ready = true;
        }
        if self.h == 0.0 || self.h.signum() != dir {
            self.h = dir * self.initial_step(t_end - self.t);
        }
        let mut last_rejected = false;
        loop {
            let remaining = t_end - self.t;
            if remaining * dir <= 0.0 {
                return Ok(());
            }
            let mut h = self.h;
            let hits_end = (h - remaining) * dir >= 0.0;
            if hits_end {
                h = remaining;
            }
            if h.abs() < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::OdeFailure { t: self.t, reason: format!("step size underflow (h = {h:e})") });
            }
            if self.steps >= self.opts.max_steps {
                return Err(Error::OdeFailure { t: self.t, reason: "maximum number of steps exceeded".into() });
            }
            self.steps += 1;

            let t = self.t;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let y = &self.y;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = y[i] + h * A21 * k1[i];
            }
            (self.rhs)(t + C2 * h, tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.rhs)(t + C3 * h, tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.rhs)(t + C4 * h, tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.rhs)(t + C5 * h, tmp, k5);
            for i in 0..n {
                tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            (self.rhs)(t + h, tmp, k6);
            for i in 0..n {
                tmp[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            (self.rhs)(t + h, tmp, k7);

            let mut err = 0.0_f64;
            for i in 0..n {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let w = self.opts.atol + self.opts.rtol * y[i].abs().max(tmp[i].abs());
                err = err.max((e / w).abs());
            }
            if !err.is_finite() {
                self.h *= 0.1;
                last_rejected = true;
                continue;
            }

            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                std::mem::swap(&mut self.y, &mut self.tmp);
                self.k.swap(0, 6);
                self.t = if hits_end { t_end } else { t + h };
                let factor = if last_rejected { factor.min(1.0) } else { factor };
                // Do not let a short final step shrink the controller's step.
                if !hits_end || factor * h.abs() > self.h.abs() {
                    self.h = h * factor;
                }
                last_rejected = false;
            } else {
                self.h = h * factor.min(1.0);
                last_rejected = true;
            }
        }
    }
}

/// Convenience wrapper: integrates `y` from `t0` to `t1` in place.
pub fn solve<F>(rhs: F, t0: f64, t1: f64, y: &mut Vec<f64>, opts: OdeOptions) -> Result<usize>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut solver = Dopri5::new(rhs, t0, std::mem::take(y), opts);
    let out = solver.advance_to(t1);
    *y = std::mem::take(&mut solver.y);
    out.map(|_| solver.steps)
}
