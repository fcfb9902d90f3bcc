//! Time step selection: wave-speed (CFL) based and embedded-error based with
//! a PID controller.

use thiserror::Error;

use crate::equations::{Euler, State};
use crate::mesh::ElementGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum TimestepError {
    #[error("inadmissible state in time step computation")]
    Inadmissible,
    #[error("time step must be positive (got {0:e})")]
    NonPositive(f64),
}

/// `max_{e,p} (1/|J|) sum_i sum_n |Ja^i_n| (|v_n| + c)`.
pub fn max_scaled_speed(eq: &Euler, u: &[State], geometry: &[ElementGeometry]) -> Result<f64, TimestepError> {
    let mut worst: f64 = 0.0;
    let mut offset = 0;
    for g in geometry {
        let np = g.jac.len();
        for p in 0..np {
            let s = &u[offset + p];
            if !eq.is_admissible(s) {
                return Err(TimestepError::Inadmissible);
            }
            let c = eq.sound_speed(s);
            let l = [(s[1] / s[0]).abs() + c, (s[2] / s[0]).abs() + c];
            let mut sum = 0.0;
            for i in 0..2 {
                let ja = g.ja[i][p];
                sum += ja[0].abs() * l[0] + ja[1].abs() * l[1];
            }
            worst = worst.max(sum / g.jac[p].abs());
        }
        offset += np;
    }
    Ok(worst)
}

/// `dt = C (2/(N+1)) / max scaled speed`.
pub fn cfl_dt(eq: &Euler, u: &[State], geometry: &[ElementGeometry], degree: usize, cfl: f64) -> Result<f64, TimestepError> {
    let speed = max_scaled_speed(eq, u, geometry)?;
    let dt = cfl * 2.0 / (degree as f64 + 1.0) / speed;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(TimestepError::NonPositive(dt));
    }
    Ok(dt)
}

/// CFL number that reproduces `dt` through [`cfl_dt`].
pub fn effective_cfl(dt: f64, max_speed: f64, degree: usize) -> f64 {
    dt * max_speed * (degree as f64 + 1.0) / 2.0
}

/// Running sum of squared normalized differences between the two embedded
/// solutions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    pub sum: f64,
    pub count: usize,
}

impl ErrorAccumulator {
    #[inline]
    pub fn contribution(u: &State, uhat: &State, tol_abs: f64, tol_rel: f64) -> f64 {
        let mut s = 0.0;
        for v in 0..4 {
            let d = (u[v] - uhat[v]) / (tol_abs + tol_rel * u[v].abs().max(uhat[v].abs()));
            s += d * d;
        }
        s
    }

    pub fn accumulate(&mut self, u: &[State], uhat: &[State], tol_abs: f64, tol_rel: f64) {
        for (a, b) in u.iter().zip(uhat) {
            self.sum += Self::contribution(a, b, tol_abs, tol_rel);
        }
        self.count += 4 * u.len();
    }

    pub fn merge(&mut self, other: &ErrorAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
    }

    /// `max(sqrt(sum / M), 1e-10)`.
    pub fn norm(&self) -> f64 {
        let w = if self.count > 0 { (self.sum / self.count as f64).sqrt() } else { 0.0 };
        if w.is_nan() {
            f64::INFINITY
        } else {
            w.max(PidController::W_FLOOR)
        }
    }
}

/// Outcome of one attempted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub factor: f64,
    pub accept: bool,
    pub dt_next: f64,
}

/// Step size factor limiter `kappa(x) = 1 + atan(x - 1)`.
#[inline]
pub fn kappa(x: f64) -> f64 {
    1.0 + (x - 1.0).atan()
}

/// PID step size controller of the embedded-error mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub beta: [f64; 3],
    pub k: f64,
    pub eps_n: f64,
    pub eps_nm1: f64,
    pub accept_safety: f64,
    /// Factor cap applied when a step is rejected for inadmissibility.
    pub inadmissible_factor: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl PidController {
    pub const W_FLOOR: f64 = 1e-10;

    /// Controller for the embedded pair of orders `N+1` and `N`.
    pub fn new(degree: usize) -> Self {
        let q = degree + 1;
        let qhat = degree;
        Self {
            beta: [0.6, -0.2, 0.0],
            k: (q.min(qhat) + 1) as f64,
            eps_n: 1.0,
            eps_nm1: 1.0,
            accept_safety: 0.81,
            inadmissible_factor: 0.5,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn factor(&self, eps_np1: f64) -> f64 {
        let [b1, b2, b3] = self.beta;
        let x = eps_np1.powf(b1 / self.k) * self.eps_n.powf(b2 / self.k) * self.eps_nm1.powf(b3 / self.k);
        kappa(x)
    }

    /// Decide on a step attempted with size `dt`.
    pub fn decide(&mut self, acc: &ErrorAccumulator, inadmissible: bool, dt: f64) -> StepDecision {
        let w = acc.norm();
        let eps = 1.0 / w;
        let mut factor = self.factor(eps);
        if !factor.is_finite() {
            factor = self.inadmissible_factor;
        }
        let accept = factor >= self.accept_safety && !inadmissible;
        if accept {
            self.eps_nm1 = self.eps_n;
            self.eps_n = eps;
            self.accepted += 1;
        } else {
            self.rejected += 1;
            if inadmissible {
                factor = factor.min(self.inadmissible_factor);
            }
        }
        StepDecision { factor, accept, dt_next: factor * dt }
    }
}
