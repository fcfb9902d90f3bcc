//! Element-local Lax-Wendroff flux reconstruction kernels.
//!
//! The time-averaged contravariant flux is built with the approximate
//! Lax-Wendroff procedure: time derivatives of the flux are replaced by
//! central finite differences of the flux evaluated at Taylor-shifted
//! states. Scaled derivatives `dt^k d_t^k (.) / k!` are stored throughout so
//! that no power of `dt` is ever formed explicitly.

use crate::basis::NodalBasis1D;
use crate::equations::{Euler, State};
use crate::mesh::{face_node, side_dir, side_sign, ElementGeometry, Point};

/// Face trace of one element side at one point: outward normal component of
/// the time-averaged flux (scaled by the side's metric), time-averaged
/// solution and solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Trace {
    pub fout: State,
    pub uave: State,
    pub u: State,
}

/// Central difference stencil approximating `dt^k/k! d_t^k`.
#[derive(Debug, Clone)]
pub struct LwStencil {
    pub order: usize,
    pub offsets: Vec<i32>,
    pub coeffs: Vec<f64>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Stencil for the `k`-th time derivative of the flux, accurate to
/// `O(dt^{N+1-k})` (at least second order).
pub fn lw_stencil(k: usize, degree: usize) -> LwStencil {
    let r = (degree + 1 - k.min(degree)).div_ceil(2).max(1);
    let m = (k - 1) / 2 + r;
    let npts = 2 * m + 1;
    let offsets: Vec<i32> = (-(m as i32)..=(m as i32)).collect();
    // sum_j c_j j^l = k! delta_{lk}, l = 0..2m
    let mut a = vec![vec![0.0; npts + 1]; npts];
    for l in 0..npts {
        for (c, &j) in offsets.iter().enumerate() {
            a[l][c] = (j as f64).powi(l as i32);
        }
        a[l][npts] = if l == k { factorial(k) } else { 0.0 };
    }
    for col in 0..npts {
        let piv = (col..npts).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..npts {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=npts {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let kf = factorial(k);
    let mut coeffs: Vec<f64> = (0..npts).map(|i| a[i][npts] / a[i][i] / kf).collect();
    // Odd derivatives have an exactly vanishing centre weight.
    if k % 2 == 1 {
        coeffs[m] = 0.0;
    }
    LwStencil { order: k, offsets, coeffs }
}

/// Scratch and output of [`approximate_lw`] for one element.
#[derive(Debug, Clone)]
pub struct TimeAveragedData {
    /// `F~` in both reference directions.
    pub flux: [Vec<State>; 2],
    /// Highest-order term `phi_N = dt^N/N! d_t^N f~` (so `F^ = F~ - phi_N/(N+1)`).
    pub top: [Vec<State>; 2],
    /// Time-averaged solution `U`.
    pub uave: Vec<State>,
    derivs: Vec<Vec<State>>,
    phi0: [Vec<State>; 2],
    div: Vec<State>,
}

impl TimeAveragedData {
    pub fn new(nn: usize) -> Self {
        let z = vec![[0.0; 4]; nn * nn];
        Self {
            flux: [z.clone(), z.clone()],
            top: [z.clone(), z.clone()],
            uave: z.clone(),
            derivs: vec![z.clone(); nn],
            phi0: [z.clone(), z.clone()],
            div: z,
        }
    }

    /// Truncated flux `F^`.
    pub fn fhat(&self, degree: usize) -> [Vec<State>; 2] {
        let s = 1.0 / (degree as f64 + 1.0);
        std::array::from_fn(|d| {
            self.flux[d]
                .iter()
                .zip(&self.top[d])
                .map(|(f, t)| std::array::from_fn(|v| f[v] - s * t[v]))
                .collect()
        })
    }

    /// Scaled time derivative `dt^k/k! d_t^k u` from the last call.
    pub fn scaled_derivative(&self, k: usize) -> &[State] {
        &self.derivs[k]
    }
}

/// Approximate Lax-Wendroff machinery for one degree.
#[derive(Debug, Clone)]
pub struct LwOperator {
    pub eq: Euler,
    pub basis: NodalBasis1D,
    pub stencils: Vec<LwStencil>,
}

#[inline(always)]
fn contravariant(eq: &Euler, u: &State, j1: Point, j2: Point) -> (State, State) {
    let (fx, fy, _) = eq.fluxes(u);
    let mut a = [0.0; 4];
    let mut b = [0.0; 4];
    for v in 0..4 {
        a[v] = j1[0] * fx[v] + j1[1] * fy[v];
        b[v] = j2[0] * fx[v] + j2[1] * fy[v];
    }
    (a, b)
}

/// Contravariant fluxes `f~^i = sum_n Ja^i_n f_n(u)` at every node.
pub fn contravariant_flux_nodes(eq: &Euler, u: &[State], geom: &ElementGeometry) -> Result<[Vec<State>; 2], crate::equations::EquationError> {
    let mut out = [vec![[0.0; 4]; u.len()], vec![[0.0; 4]; u.len()]];
    for (p, up) in u.iter().enumerate() {
        eq.check_admissible(up)?;
        let (a, b) = contravariant(eq, up, geom.ja[0][p], geom.ja[1][p]);
        out[0][p] = a;
        out[1][p] = b;
    }
    Ok(out)
}

/// Reference divergence `D_1 f^1 + D_2 f^2` at every node.
pub fn divergence(basis: &NodalBasis1D, f: &[Vec<State>; 2], out: &mut [State]) {
    let nn = basis.n_nodes();
    let d = &basis.diff.data;
    for j in 0..nn {
        for i in 0..nn {
            let mut acc = [0.0; 4];
            let di = &d[i * nn..(i + 1) * nn];
            let dj = &d[j * nn..(j + 1) * nn];
            for q in 0..nn {
                let a = &f[0][q + nn * j];
                let b = &f[1][i + nn * q];
                let (x, y) = (di[q], dj[q]);
                for v in 0..4 {
                    acc[v] += x * a[v] + y * b[v];
                }
            }
            out[i + nn * j] = acc;
        }
    }
}

impl LwOperator {
    pub fn new(eq: Euler, basis: NodalBasis1D) -> Self {
        let n = basis.degree;
        let stencils = (1..=n).map(|k| lw_stencil(k, n)).collect();
        Self { eq, basis, stencils }
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    /// Compute `F~`, `phi_N` and `U` for one element. Returns `false` when a
    /// Taylor-shifted state was inadmissible (the data are still filled).
    pub fn approximate_lw(&self, u: &[State], geom: &ElementGeometry, dt: f64, out: &mut TimeAveragedData) -> bool {
        let eq = &self.eq;
        let n = self.degree();
        let nn = n + 1;
        let np = nn * nn;
        let mut admissible = true;
        out.derivs[0].copy_from_slice(u);
        for p in 0..np {
            let (a, b) = contravariant(eq, &u[p], geom.ja[0][p], geom.ja[1][p]);
            out.phi0[0][p] = a;
            out.phi0[1][p] = b;
            out.flux[0][p] = a;
            out.flux[1][p] = b;
            out.top[0][p] = a;
            out.top[1][p] = b;
            out.uave[p] = u[p];
        }
        for k in 1..=n {
            divergence(&self.basis, &out.top, &mut out.div);
            let kf = k as f64;
            let inv_k1 = 1.0 / (kf + 1.0);
            {
                let (lower, upper) = out.derivs.split_at_mut(k);
                let _ = lower;
                let dk = &mut upper[0];
                for p in 0..np {
                    let s = -dt * geom.inv_jac[p] / kf;
                    for v in 0..4 {
                        dk[p][v] = s * out.div[p][v];
                        out.uave[p][v] += inv_k1 * dk[p][v];
                    }
                }
            }
            let st = &self.stencils[k - 1];
            for p in 0..np {
                let mut acc = [[0.0; 4]; 2];
                for (&j, &c) in st.offsets.iter().zip(&st.coeffs) {
                    if c == 0.0 {
                        continue;
                    }
                    let (a, b) = if j == 0 {
                        (out.phi0[0][p], out.phi0[1][p])
                    } else {
                        let jf = j as f64;
                        let mut w = out.derivs[0][p];
                        let mut pw = 1.0;
                        for l in 1..=k {
                            pw *= jf;
                            let dl = &out.derivs[l][p];
                            for v in 0..4 {
                                w[v] += pw * dl[v];
                            }
                        }
                        if !eq.is_admissible(&w) {
                            admissible = false;
                        }
                        contravariant(eq, &w, geom.ja[0][p], geom.ja[1][p])
                    };
                    for v in 0..4 {
                        acc[0][v] += c * a[v];
                        acc[1][v] += c * b[v];
                    }
                }
                out.top[0][p] = acc[0];
                out.top[1][p] = acc[1];
                for v in 0..4 {
                    out.flux[0][p][v] += inv_k1 * acc[0][v];
                    out.flux[1][p][v] += inv_k1 * acc[1][v];
                }
            }
        }
        admissible
    }

    /// Outward face traces of one side from the time-averaged data.
    pub fn side_traces(&self, u: &[State], data: &TimeAveragedData, side: usize, out: &mut [Trace]) {
        let nn = self.basis.n_nodes();
        let dir = side_dir(side);
        let sgn = side_sign(side);
        for (k, t) in out.iter_mut().enumerate().take(nn) {
            let node = face_node(nn, side, k);
            let f = data.flux[dir][node];
            t.fout = [sgn * f[0], sgn * f[1], sgn * f[2], sgn * f[3]];
            t.uave = data.uave[node];
            t.u = u[node];
        }
    }
}

/// Rusanov-type flux with dissipation on the time-averaged solution.
/// `a` is the trace of the side whose outward normal is `n_unit`, `b` the
/// trace of the other side expressed with its own outward orientation and the
/// same metric scaling. Returns the flux leaving through `a`.
#[inline(always)]
pub fn lw_numerical_flux(a: &Trace, b: &Trace, lambda_scaled: f64) -> State {
    let mut f = [0.0; 4];
    for v in 0..4 {
        f[v] = 0.5 * (a.fout[v] - b.fout[v]) - 0.5 * lambda_scaled * (b.uave[v] - a.uave[v]);
    }
    f
}

/// `u_loc = u - dt/J div F~`, `u^_loc = u - dt/J div F^`.
pub fn local_updates(
    basis: &NodalBasis1D,
    u: &[State],
    data: &TimeAveragedData,
    geom: &ElementGeometry,
    dt: f64,
) -> (Vec<State>, Vec<State>) {
    let np = u.len();
    let mut div = vec![[0.0; 4]; np];
    let mut div_top = vec![[0.0; 4]; np];
    divergence(basis, &data.flux, &mut div);
    divergence(basis, &data.top, &mut div_top);
    let s = 1.0 / (basis.degree as f64 + 1.0);
    let mut hi = vec![[0.0; 4]; np];
    let mut lo = vec![[0.0; 4]; np];
    for p in 0..np {
        let c = dt * geom.inv_jac[p];
        for v in 0..4 {
            hi[p][v] = u[p][v] - c * div[p][v];
            lo[p][v] = u[p][v] - c * (div[p][v] - s * div_top[p][v]);
        }
    }
    (hi, lo)
}

/// Full LWFR update of one element given the outward numerical fluxes
/// `fstar[side][k]` on its four sides.
pub fn element_update(
    basis: &NodalBasis1D,
    u: &[State],
    data: &TimeAveragedData,
    fstar: &[Vec<State>; 4],
    geom: &ElementGeometry,
    dt: f64,
) -> Vec<State> {
    let nn = basis.n_nodes();
    let n = nn - 1;
    let mut div = vec![[0.0; 4]; u.len()];
    divergence(basis, &data.flux, &mut div);
    let mut out: Vec<State> = u.to_vec();
    for p in 0..u.len() {
        let c = dt * geom.inv_jac[p];
        for v in 0..4 {
            out[p][v] -= c * div[p][v];
        }
    }
    for side in 0..4 {
        let dir = side_dir(side);
        let sgn = side_sign(side);
        let w_end = basis.weights[if side % 2 == 1 { n } else { 0 }];
        for k in 0..nn {
            let node = face_node(nn, side, k);
            let c = dt * geom.inv_jac[node] / w_end;
            let f = data.flux[dir][node];
            for v in 0..4 {
                out[node][v] -= c * (fstar[side][k][v] - sgn * f[v]);
            }
        }
    }
    out
}

/// Quadrature mean `sum u J w / sum J w`.
pub fn element_mean(u: &[State], geom: &ElementGeometry, basis: &NodalBasis1D) -> State {
    let nn = basis.n_nodes();
    let mut acc = [0.0; 4];
    let mut vol = 0.0;
    for j in 0..nn {
        for i in 0..nn {
            let p = i + nn * j;
            let w = geom.jac[p] * basis.weights[i] * basis.weights[j];
            vol += w;
            for v in 0..4 {
                acc[v] += w * u[p][v];
            }
        }
    }
    acc.map(|a| a / vol)
}

/// Quadrature integral `sum u J w`.
pub fn element_integral(u: &[State], geom: &ElementGeometry, basis: &NodalBasis1D) -> State {
    let nn = basis.n_nodes();
    let mut acc = [0.0; 4];
    for j in 0..nn {
        for i in 0..nn {
            let p = i + nn * j;
            let w = geom.jac[p] * basis.weights[i] * basis.weights[j];
            for v in 0..4 {
                acc[v] += w * u[p][v];
            }
        }
    }
    acc
}
