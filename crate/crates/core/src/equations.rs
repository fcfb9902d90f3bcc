//! Two-dimensional compressible Euler equations.

use thiserror::Error;

/// Conserved variables `(rho, rho u, rho v, E)`.
pub type State = [f64; 4];

/// Primitive variables `(rho, u, v, p)`.
pub type Primitive = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EquationError {
    #[error("inadmissible state: rho = {rho}, p = {p}")]
    Inadmissible { rho: f64, p: f64 },
}

/// Ideal gas with ratio of specific heats `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Euler {
    pub gamma: f64,
}

impl Default for Euler {
    fn default() -> Self {
        Self { gamma: 1.4 }
    }
}

impl Euler {
    pub fn new(gamma: f64) -> Self {
        Self { gamma }
    }

    #[inline(always)]
    pub fn pressure(&self, u: &State) -> f64 {
        (self.gamma - 1.0) * (u[3] - 0.5 * (u[1] * u[1] + u[2] * u[2]) / u[0])
    }

    /// The ordered admissibility constraints: density, then pressure.
    #[inline(always)]
    pub fn constraint(&self, k: usize, u: &State) -> f64 {
        match k {
            0 => u[0],
            _ => self.pressure(u),
        }
    }

    pub const N_CONSTRAINTS: usize = 2;

    #[inline(always)]
    pub fn is_admissible(&self, u: &State) -> bool {
        u[0] > 0.0 && self.pressure(u) > 0.0
    }

    pub fn check_admissible(&self, u: &State) -> Result<(), EquationError> {
        let p = if u[0] > 0.0 { self.pressure(u) } else { f64::NAN };
        if u[0] > 0.0 && p > 0.0 {
            Ok(())
        } else {
            Err(EquationError::Inadmissible { rho: u[0], p })
        }
    }

    pub fn prim2cons(&self, w: &Primitive) -> State {
        let [rho, vx, vy, p] = *w;
        [rho, rho * vx, rho * vy, p / (self.gamma - 1.0) + 0.5 * rho * (vx * vx + vy * vy)]
    }

    pub fn cons2prim(&self, u: &State) -> Primitive {
        [u[0], u[1] / u[0], u[2] / u[0], self.pressure(u)]
    }

    #[inline(always)]
    pub fn sound_speed(&self, u: &State) -> f64 {
        (self.gamma * self.pressure(u) / u[0]).sqrt()
    }

    /// Physical flux in coordinate direction `dir` (0 = x, 1 = y).
    #[inline(always)]
    pub fn flux(&self, u: &State, dir: usize) -> State {
        let p = self.pressure(u);
        let vel = u[1 + dir] / u[0];
        let mut f = [u[1 + dir], u[1] * vel, u[2] * vel, (u[3] + p) * vel];
        f[1 + dir] += p;
        f
    }

    /// Both physical flux components plus the pressure, sharing one pressure
    /// evaluation.
    #[inline(always)]
    pub fn fluxes(&self, u: &State) -> (State, State, f64) {
        let rho_inv = 1.0 / u[0];
        let vx = u[1] * rho_inv;
        let vy = u[2] * rho_inv;
        let p = (self.gamma - 1.0) * (u[3] - 0.5 * (u[1] * vx + u[2] * vy));
        let h = u[3] + p;
        (
            [u[1], u[1] * vx + p, u[2] * vx, h * vx],
            [u[2], u[1] * vy, u[2] * vy + p, h * vy],
            p,
        )
    }

    /// Flux through a (not necessarily unit) normal `n`.
    #[inline(always)]
    pub fn normal_flux(&self, u: &State, n: [f64; 2]) -> State {
        let (fx, fy, _) = self.fluxes(u);
        [
            n[0] * fx[0] + n[1] * fy[0],
            n[0] * fx[1] + n[1] * fy[1],
            n[0] * fx[2] + n[1] * fy[2],
            n[0] * fx[3] + n[1] * fy[3],
        ]
    }

    /// `|v . n| + c` for a unit normal, without admissibility checks.
    #[inline(always)]
    pub fn max_speed_unchecked(&self, u: &State, n: [f64; 2]) -> (f64, f64) {
        let vn = (u[1] * n[0] + u[2] * n[1]) / u[0];
        (vn.abs(), self.sound_speed(u))
    }

    /// Interface wave speed estimate `max(|v-.n|, |v+.n|) + max(c-, c+)`.
    pub fn interface_wave_speed(&self, ul: &State, ur: &State, n: [f64; 2]) -> Result<f64, EquationError> {
        self.check_admissible(ul)?;
        self.check_admissible(ur)?;
        Ok(self.wave_speed_unchecked(ul, ur, n))
    }

    #[inline(always)]
    pub fn wave_speed_unchecked(&self, ul: &State, ur: &State, n: [f64; 2]) -> f64 {
        let (vl, cl) = self.max_speed_unchecked(ul, n);
        let (vr, cr) = self.max_speed_unchecked(ur, n);
        vl.max(vr) + cl.max(cr)
    }

    /// First-order Rusanov flux through unit normal `n`.
    #[inline(always)]
    pub fn rusanov(&self, ul: &State, ur: &State, n: [f64; 2]) -> State {
        let fl = self.normal_flux(ul, n);
        let fr = self.normal_flux(ur, n);
        let lam = self.wave_speed_unchecked(ul, ur, n);
        let mut f = [0.0; 4];
        for k in 0..4 {
            f[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * lam * (ur[k] - ul[k]);
        }
        f
    }

    /// Reflect the momentum of a state (or state-shaped vector) about the
    /// line with unit normal `n`.
    #[inline(always)]
    pub fn reflect(u: &State, n: [f64; 2]) -> State {
        let mn = u[1] * n[0] + u[2] * n[1];
        [u[0], u[1] - 2.0 * mn * n[0], u[2] - 2.0 * mn * n[1], u[3]]
    }

    /// Rotate the momentum components of `u` by angle with cosine `c` and
    /// sine `s`.
    pub fn rotate(u: &State, c: f64, s: f64) -> State {
        [u[0], c * u[1] - s * u[2], s * u[1] + c * u[2], u[3]]
    }
}
