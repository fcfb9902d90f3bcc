//! Subcell-blending shock capturing with admissibility preservation.
//!
//! Each element blends the high-order residual with a first-order finite
//! volume residual on the subcells delimited by the quadrature weights.
//! Interface fluxes are limited so that the low-order update of every
//! boundary subcell stays admissible, which makes all element means
//! admissible; a scaling limiter then fixes individual nodes.

use thiserror::Error;

use crate::basis::{legendre_orthonormal, NodalBasis1D};
use crate::equations::{Euler, State};
use crate::mesh::{ElementGeometry, Point};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ShockCaptureError {
    #[error("inadmissible element mean: rho = {rho}, p = {p}")]
    InadmissibleMean { rho: f64, p: f64 },
    #[error("first-order subcell update inadmissible; time step too large")]
    LowOrderInadmissible,
}

/// Quantity fed to the modal smoothness indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorVariable {
    Density,
    Pressure,
    DensityPressure,
}

impl IndicatorVariable {
    #[inline]
    pub fn eval(&self, eq: &Euler, u: &State) -> f64 {
        match self {
            IndicatorVariable::Density => u[0],
            IndicatorVariable::Pressure => eq.pressure(u),
            IndicatorVariable::DensityPressure => u[0] * eq.pressure(u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorConfig {
    pub variable: IndicatorVariable,
    pub a: f64,
    pub c: f64,
    pub exponent: f64,
    pub sharpness: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            variable: IndicatorVariable::DensityPressure,
            a: 0.5,
            c: 1.8,
            exponent: 0.25,
            sharpness: 9.21024,
            alpha_min: 0.001,
            alpha_max: 1.0,
        }
    }
}

impl IndicatorConfig {
    /// `T(N) = a 10^(-c (N+1)^exponent)`.
    pub fn threshold(&self, degree: usize) -> f64 {
        self.a * 10f64.powf(-self.c * ((degree + 1) as f64).powf(self.exponent))
    }

    /// Logistic map of the energy indicator.
    pub fn logistic(&self, energy: f64, degree: usize) -> f64 {
        let t = self.threshold(degree);
        1.0 / (1.0 + (-(self.sharpness / t) * (energy - t)).exp())
    }

    /// Snap to pure high/low order near the ends, then cap.
    pub fn clip(&self, alpha: f64) -> f64 {
        let a = if alpha < self.alpha_min {
            0.0
        } else if alpha > 1.0 - self.alpha_min {
            1.0
        } else {
            alpha
        };
        a.min(self.alpha_max)
    }
}

/// Energy fraction in the highest modes of a nodal field.
pub fn modal_energy(q: &[f64], basis: &NodalBasis1D) -> f64 {
    let nn = basis.n_nodes();
    let n = nn - 1;
    // q^_{ab} = sum_ij q_ij L_a(xi_i) L_b(xi_j) w_i w_j
    let leg: Vec<Vec<f64>> = (0..nn)
        .map(|a| (0..nn).map(|i| legendre_orthonormal(a, basis.nodes[i]) * basis.weights[i]).collect())
        .collect();
    let mut tmp = vec![0.0; nn * nn];
    for j in 0..nn {
        for a in 0..nn {
            tmp[a + nn * j] = (0..nn).map(|i| leg[a][i] * q[i + nn * j]).sum();
        }
    }
    let mut s = [0.0f64; 3];
    for b in 0..nn {
        for a in 0..nn {
            let c: f64 = (0..nn).map(|j| leg[b][j] * tmp[a + nn * j]).sum();
            let e = c * c;
            let m = a.max(b);
            s[0] += e;
            if m < n {
                s[1] += e;
            }
            if n >= 2 && m + 2 <= n {
                s[2] += e;
            }
        }
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let e1 = ratio(s[0] - s[1], s[0]);
    let e2 = if n >= 2 { ratio(s[1] - s[2], s[1]) } else { 0.0 };
    e1.max(e2)
}

/// Raw (clipped, capped) blending coefficient of one element.
pub fn smoothness_alpha(eq: &Euler, u: &[State], basis: &NodalBasis1D, cfg: &IndicatorConfig) -> f64 {
    let q: Vec<f64> = u.iter().map(|s| cfg.variable.eval(eq, s)).collect();
    let e = modal_energy(&q, basis);
    cfg.clip(cfg.logistic(e, basis.degree))
}

/// `alpha_e = max(alpha_e, alpha_E / 2)` over face neighbors.
pub fn smooth_alpha(raw: &[f64], neighbors: &[Vec<usize>]) -> Vec<f64> {
    raw.iter()
        .enumerate()
        .map(|(e, &a)| neighbors[e].iter().fold(a, |m, &nb| m.max(0.5 * raw[nb])))
        .collect()
}

/// Outward normals of the right faces of all subcells, per direction.
#[derive(Debug, Clone)]
pub struct SubcellGeometry {
    pub normal_right: [Vec<Point>; 2],
}

impl SubcellGeometry {
    /// Left-face normal of subcell `p` in direction `dir`.
    pub fn normal_left(&self, nn: usize, dir: usize, p: usize) -> Point {
        let (i, j) = (p % nn, p / nn);
        let prev = match dir {
            0 if i > 0 => Some(p - 1),
            1 if j > 0 => Some(p - nn),
            _ => None,
        };
        match prev {
            Some(q) => {
                let n = self.normal_right[dir][q];
                [-n[0], -n[1]]
            }
            None => [f64::NAN, f64::NAN],
        }
    }
}

pub fn subcell_normals(geom: &ElementGeometry, basis: &NodalBasis1D) -> SubcellGeometry {
    let nn = basis.n_nodes();
    let d = &basis.diff;
    let w = &basis.weights;
    let mut nr = [vec![[0.0; 2]; nn * nn], vec![[0.0; 2]; nn * nn]];
    for dir in 0..2 {
        let idx = |line: usize, l: usize| if dir == 0 { l + nn * line } else { line + nn * l };
        for line in 0..nn {
            let mut acc = geom.ja[dir][idx(line, 0)];
            for l in 0..nn {
                let mut der = [0.0; 2];
                for q in 0..nn {
                    let v = geom.ja[dir][idx(line, q)];
                    der[0] += d[(l, q)] * v[0];
                    der[1] += d[(l, q)] * v[1];
                }
                acc[0] += w[l] * der[0];
                acc[1] += w[l] * der[1];
                nr[dir][idx(line, l)] = acc;
            }
        }
    }
    SubcellGeometry { normal_right: nr }
}

/// First-order subcell contributions internal to one element.
///
/// Adds `-dt/(J w) (G_{p+1/2} - G_{p-1/2})` for interior subcell faces to
/// `resid` (when given) and stores, for every side and face point, the flux
/// leaving the boundary subcell through its inner face (`inner[side][k]`).
pub fn low_order_inner(
    eq: &Euler,
    basis: &NodalBasis1D,
    u: &[State],
    geom: &ElementGeometry,
    sub: &SubcellGeometry,
    dt: f64,
    mut resid: Option<&mut [State]>,
    inner: &mut [Vec<State>; 4],
) {
    let nn = basis.n_nodes();
    let n = nn - 1;
    let w = &basis.weights;
    if let Some(r) = resid.as_deref_mut() {
        r.iter_mut().for_each(|x| *x = [0.0; 4]);
    }
    for dir in 0..2 {
        let idx = |line: usize, l: usize| if dir == 0 { l + nn * line } else { line + nn * l };
        for line in 0..nn {
            for l in 0..n {
                let p = idx(line, l);
                let q = idx(line, l + 1);
                let nrm = sub.normal_right[dir][p];
                let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1]).sqrt();
                let unit = [nrm[0] / len, nrm[1] / len];
                let f = eq.rusanov(&u[p], &u[q], unit);
                let g = f.map(|x| x * len);
                if let Some(r) = resid.as_deref_mut() {
                    let cp = dt * geom.inv_jac[p] / w[l];
                    let cq = dt * geom.inv_jac[q] / w[l + 1];
                    for v in 0..4 {
                        r[p][v] -= cp * g[v];
                        r[q][v] += cq * g[v];
                    }
                }
                if l == 0 {
                    inner[2 * dir][line] = g;
                }
                if l + 1 == n {
                    inner[2 * dir + 1][line] = g.map(|x| -x);
                }
            }
        }
    }
}

/// Complete first-order update of one element given the outward interface
/// fluxes on its sides.
pub fn low_order_update(
    eq: &Euler,
    basis: &NodalBasis1D,
    u: &[State],
    geom: &ElementGeometry,
    sub: &SubcellGeometry,
    fstar: &[Vec<State>; 4],
    dt: f64,
) -> Vec<State> {
    let nn = basis.n_nodes();
    let mut r = vec![[0.0; 4]; u.len()];
    let mut inner: [Vec<State>; 4] = std::array::from_fn(|_| vec![[0.0; 4]; nn]);
    low_order_inner(eq, basis, u, geom, sub, dt, Some(&mut r), &mut inner);
    let mut out: Vec<State> = u.iter().zip(&r).map(|(a, b)| std::array::from_fn(|v| a[v] + b[v])).collect();
    add_face_terms(basis, geom, fstar, dt, &mut out);
    out
}

/// Add the common surface contribution `-dt/(J w_end) F*` of all sides.
pub fn add_face_terms(basis: &NodalBasis1D, geom: &ElementGeometry, fstar: &[Vec<State>; 4], dt: f64, out: &mut [State]) {
    let nn = basis.n_nodes();
    let n = nn - 1;
    for side in 0..4 {
        let w_end = basis.weights[if side % 2 == 1 { n } else { 0 }];
        for k in 0..nn {
            let node = crate::mesh::face_node(nn, side, k);
            let c = dt * geom.inv_jac[node] / w_end;
            for v in 0..4 {
                out[node][v] -= c * fstar[side][k][v];
            }
        }
    }
}

/// One side of an interface as seen by the flux limiter: the boundary
/// subcell's state, the flux leaving it through its inner face, the update
/// coefficient `dt / (k_i w_end J)` and the orientation of the interface
/// flux (`+1` if the flux is outward for this side).
#[derive(Debug, Clone, Copy)]
pub struct LimiterSide {
    pub u: State,
    pub inner: State,
    pub coeff: f64,
    pub sign: f64,
}

impl LimiterSide {
    #[inline(always)]
    pub fn candidate(&self, f: &State) -> State {
        std::array::from_fn(|v| self.u[v] - self.coeff * (self.sign * f[v] + self.inner[v]))
    }
}

/// Blend the high-order and first-order interface fluxes and limit the
/// result so that every adjacent boundary subcell update satisfies each
/// constraint with margin `p_k(low)/10`. Returns the flux and the cumulative
/// blending factor after each constraint pass.
pub fn limit_blended_interface_flux(
    eq: &Euler,
    f_lw: &State,
    f_low: &State,
    alpha_face: f64,
    sides: &[LimiterSide],
) -> Result<(State, [f64; 2]), ShockCaptureError> {
    let mut f: State = std::array::from_fn(|v| (1.0 - alpha_face) * f_lw[v] + alpha_face * f_low[v]);
    let mut lows = [[0.0; 4]; 2];
    for (j, s) in sides.iter().enumerate() {
        lows[j] = s.candidate(f_low);
        if !eq.is_admissible(&lows[j]) {
            return Err(ShockCaptureError::LowOrderInadmissible);
        }
    }
    let mut cumulative = [1.0; 2];
    let mut total = 1.0;
    for k in 0..Euler::N_CONSTRAINTS {
        let mut theta: f64 = 1.0;
        for (j, s) in sides.iter().enumerate() {
            let pl = eq.constraint(k, &lows[j]);
            let eps = 0.1 * pl;
            let pc = eq.constraint(k, &s.candidate(&f));
            if !(pc >= eps) {
                let t = ((eps - pl) / (pc - pl)).abs();
                theta = theta.min(if t.is_finite() { t } else { 0.0 });
            }
        }
        if theta < 1.0 {
            for v in 0..4 {
                f[v] = theta * f[v] + (1.0 - theta) * f_low[v];
            }
        }
        total *= theta;
        cumulative[k] = total;
    }
    Ok((f, cumulative))
}

/// Largest `t in [0, 1]` with `p(c + t (u - c)) >= eps`, assuming it holds
/// at `t = 0`.
fn pressure_scaling(eq: &Euler, center: &State, u: &State, eps: f64) -> f64 {
    let at = |t: f64| -> State { std::array::from_fn(|v| center[v] + t * (u[v] - center[v])) };
    let ok = |s: &State| s[0] > 0.0 && eq.pressure(s) >= eps;
    if ok(u) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if ok(&at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Scale `states` toward `center` until every state has density at least
/// `eps_rho` and pressure at least `eps_p`. Returns the scaling factor.
pub fn scale_toward(eq: &Euler, states: &mut [State], center: &State, eps_rho: f64, eps_p: f64) -> f64 {
    let rho_c = center[0];
    let min_rho = states.iter().map(|s| s[0]).fold(f64::INFINITY, f64::min);
    let mut theta_rho: f64 = 1.0;
    if min_rho < eps_rho {
        theta_rho = ((rho_c - eps_rho) / (rho_c - min_rho)).clamp(0.0, 1.0);
        for s in states.iter_mut() {
            for v in 0..4 {
                s[v] = center[v] + theta_rho * (s[v] - center[v]);
            }
        }
    }
    let mut theta_p: f64 = 1.0;
    for s in states.iter() {
        if !(s[0] > 0.0 && eq.pressure(s) >= eps_p) {
            theta_p = theta_p.min(pressure_scaling(eq, center, s, eps_p));
        }
    }
    if theta_p < 1.0 {
        for s in states.iter_mut() {
            for v in 0..4 {
                s[v] = center[v] + theta_p * (s[v] - center[v]);
            }
        }
    }
    theta_rho * theta_p
}

/// Relative floor used by the scaling limiter.
pub const SCALING_FLOOR: f64 = 1e-10;

/// Zhang-Shu scaling about the element mean.
pub fn scaling_limiter(eq: &Euler, u: &mut [State], mean: &State) -> Result<f64, ShockCaptureError> {
    if !eq.is_admissible(mean) {
        return Err(ShockCaptureError::InadmissibleMean {
            rho: mean[0],
            p: if mean[0] > 0.0 { eq.pressure(mean) } else { f64::NAN },
        });
    }
    let eps_rho = SCALING_FLOOR * mean[0];
    let eps_p = SCALING_FLOOR * eq.pressure(mean);
    Ok(scale_toward(eq, u, mean, eps_rho, eps_p))
}

/// `(1 - alpha) u_high + alpha u_low` nodewise.
pub fn blend_residuals(high: &[State], low: &[State], alpha: f64) -> Vec<State> {
    high.iter()
        .zip(low)
        .map(|(h, l)| std::array::from_fn(|v| (1.0 - alpha) * h[v] + alpha * l[v]))
        .collect()
}
