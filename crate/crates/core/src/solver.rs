//! One explicit step of the blended LWFR scheme on a whole mesh.
//!
//! The step runs in three phases: an element-local phase (time-averaged
//! data, volume residuals, face traces, subcell fluxes, embedded error), a
//! face phase (numerical fluxes on conforming, boundary and mortar faces,
//! blending and flux limiting) and an element update phase (residual
//! blending, surface terms, scaling limiter).

use rayon::prelude::*;
use thiserror::Error;

use crate::amr::{coarse_as_fine_neighbor, fix_mortar_states, project_to_coarse, prolong_coarse};
use crate::basis::NodalBasis1D;
use crate::equations::{Euler, State};
use crate::lwfr::{divergence, element_mean, lw_numerical_flux, LwOperator, TimeAveragedData, Trace};
use crate::mesh::{face_node, flip_index, side_dir, side_sign, Face, Mesh, Point};
use crate::shockcapture::{
    limit_blended_interface_flux, low_order_inner, scaling_limiter, smooth_alpha, smoothness_alpha,
    subcell_normals, IndicatorConfig, LimiterSide, ShockCaptureError, SubcellGeometry,
};
use crate::timestep::ErrorAccumulator;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum StepFailure {
    #[error("first-order interface update inadmissible")]
    LowOrderInadmissible,
    #[error("inadmissible element mean in element {element}")]
    InadmissibleMean { element: usize },
    #[error("non-finite solution in element {element}")]
    NonFinite { element: usize },
}

/// Ghost traces for boundary faces.
pub trait BoundaryTraces {
    /// Ghost trace at a boundary point `x` of the side with tag `tag`.
    /// `normal` is the outward scaled normal (`+-Ja^i`), `unit` its
    /// direction. The returned `fout` uses the ghost's own outward
    /// orientation, i.e. it is the flux through `-normal`.
    fn ghost(&self, tag: usize, x: Point, normal: Point, unit: Point, t: f64, dt: f64, inner: &Trace) -> Trace;
}

/// Which state the embedded error compares the high-order local update to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorReference {
    /// Local update with the flux truncated by one order.
    Truncated,
    /// The solution at the start of the step.
    Previous,
}

/// Where the dissipation wave speed is evaluated along a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipationSpeed {
    PerPoint,
    FaceMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOptions {
    pub shock_capturing: bool,
    pub indicator: IndicatorConfig,
    /// Flux limiting plus scaling limiter.
    pub positivity: bool,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub error_reference: ErrorReference,
    pub dissipation: DissipationSpeed,
    /// Compute both pure updates in every element and report the largest
    /// relative mismatch of their means.
    pub check_means: bool,
    /// Redo the step when a Taylor-shifted state fed to a flux evaluation
    /// is inadmissible. Off by default: at strong discontinuities the
    /// shifted states can be inadmissible for any step size, while the
    /// limited update stays admissible regardless.
    pub reject_shifted_states: bool,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            shock_capturing: true,
            indicator: IndicatorConfig::default(),
            positivity: true,
            tol_abs: 1e-6,
            tol_rel: 1e-6,
            error_reference: ErrorReference::Truncated,
            dissipation: DissipationSpeed::PerPoint,
            check_means: false,
            reject_shifted_states: false,
        }
    }
}

#[derive(Debug, Clone)]
struct ElementWork {
    data: TimeAveragedData,
    div: Vec<State>,
    div_top: Vec<State>,
    traces: [Vec<Trace>; 4],
    inner: [Vec<State>; 4],
    resid_h: Vec<State>,
    resid_l: Vec<State>,
    has_low: bool,
    err: ErrorAccumulator,
    admissible: bool,
    mean: State,
}

impl ElementWork {
    fn new(nn: usize) -> Self {
        let np = nn * nn;
        Self {
            data: TimeAveragedData::new(nn),
            div: vec![[0.0; 4]; np],
            div_top: vec![[0.0; 4]; np],
            traces: std::array::from_fn(|_| vec![Trace::default(); nn]),
            inner: std::array::from_fn(|_| vec![[0.0; 4]; nn]),
            resid_h: vec![[0.0; 4]; np],
            resid_l: vec![[0.0; 4]; np],
            has_low: false,
            err: ErrorAccumulator::default(),
            admissible: true,
            mean: [0.0; 4],
        }
    }
}

/// Result of a successful step attempt.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub u: Vec<State>,
    pub error: ErrorAccumulator,
    /// A Taylor-shifted state of the approximate Lax-Wendroff procedure was
    /// inadmissible somewhere.
    pub inadmissible: bool,
    /// Largest relative mismatch between the means of the pure high- and
    /// low-order updates (only with `check_means`).
    pub mean_mismatch: f64,
    /// Number of interface points where the flux limiter changed the flux.
    pub limited_points: usize,
}

/// Blended LWFR scheme state tied to one mesh generation.
pub struct Solver {
    pub op: LwOperator,
    pub subcells: Vec<SubcellGeometry>,
    work: Vec<ElementWork>,
    face_flux: Vec<[Vec<State>; 4]>,
    generation: u64,
}

impl Solver {
    pub fn new(eq: Euler, mesh: &Mesh) -> Self {
        let mut s = Self {
            op: LwOperator::new(eq, mesh.basis.clone()),
            subcells: Vec::new(),
            work: Vec::new(),
            face_flux: Vec::new(),
            generation: u64::MAX,
        };
        s.sync(mesh);
        s
    }

    #[inline]
    pub fn eq(&self) -> &Euler {
        &self.op.eq
    }

    #[inline]
    pub fn basis(&self) -> &NodalBasis1D {
        &self.op.basis
    }

    /// Rebuild per-element storage after the mesh changed.
    pub fn sync(&mut self, mesh: &Mesh) {
        if self.generation == mesh.generation && self.work.len() == mesh.n_elements() {
            return;
        }
        let nn = mesh.basis.n_nodes();
        self.subcells = mesh.geometry.iter().map(|g| subcell_normals(g, &mesh.basis)).collect();
        self.work = (0..mesh.n_elements()).map(|_| ElementWork::new(nn)).collect();
        self.face_flux = (0..mesh.n_elements()).map(|_| std::array::from_fn(|_| vec![[0.0; 4]; nn])).collect();
        self.generation = mesh.generation;
    }

    /// Smoothed blending coefficients of the current solution.
    pub fn compute_alpha(&self, mesh: &Mesh, u: &[State], cfg: &IndicatorConfig) -> Vec<f64> {
        let np = mesh.basis.n_nodes().pow(2);
        let raw: Vec<f64> = (0..mesh.n_elements())
            .into_par_iter()
            .map(|e| smoothness_alpha(&self.op.eq, &u[e * np..(e + 1) * np], &mesh.basis, cfg))
            .collect();
        smooth_alpha(&raw, &mesh.element_neighbors())
    }

    /// Attempt one step of size `dt` from time `t`.
    pub fn step(
        &mut self,
        mesh: &Mesh,
        u: &[State],
        alpha: &[f64],
        t: f64,
        dt: f64,
        bc: &dyn BoundaryTraces,
        opts: &SchemeOptions,
    ) -> Result<StepOutput, StepFailure> {
        self.sync(mesh);
        let basis = &mesh.basis;
        let nn = basis.n_nodes();
        let n = nn - 1;
        let np = nn * nn;
        let op = &self.op;
        let eq = op.eq;
        let subcells = &self.subcells;

        // Phase 1: element-local work.
        self.work.par_iter_mut().enumerate().for_each(|(e, w)| {
            let ue = &u[e * np..(e + 1) * np];
            let geom = &mesh.geometry[e];
            w.admissible = op.approximate_lw(ue, geom, dt, &mut w.data);
            divergence(basis, &w.data.flux, &mut w.div);
            divergence(basis, &w.data.top, &mut w.div_top);
            let s = 1.0 / (n as f64 + 1.0);
            let mut acc = ErrorAccumulator::default();
            for p in 0..np {
                let c = dt * geom.inv_jac[p];
                let hi: State = std::array::from_fn(|v| ue[p][v] - c * w.div[p][v]);
                let reference: State = match opts.error_reference {
                    ErrorReference::Truncated => {
                        std::array::from_fn(|v| ue[p][v] - c * (w.div[p][v] - s * w.div_top[p][v]))
                    }
                    ErrorReference::Previous => ue[p],
                };
                acc.sum += ErrorAccumulator::contribution(&hi, &reference, opts.tol_abs, opts.tol_rel);
                for v in 0..4 {
                    w.resid_h[p][v] = -c * w.div[p][v];
                }
            }
            acc.count = 4 * np;
            w.err = acc;
            for side in 0..4 {
                op.side_traces(ue, &w.data, side, &mut w.traces[side]);
                let w_end = basis.weights[if side % 2 == 1 { n } else { 0 }];
                for k in 0..nn {
                    let node = face_node(nn, side, k);
                    let c = dt * geom.inv_jac[node] / w_end;
                    for v in 0..4 {
                        w.resid_h[node][v] += c * w.traces[side][k].fout[v];
                    }
                }
            }
            let need_low = (opts.shock_capturing && alpha[e] > 0.0) || opts.check_means;
            w.has_low = need_low;
            if need_low || opts.positivity {
                let resid = if need_low { Some(&mut w.resid_l[..]) } else { None };
                low_order_inner(&eq, basis, ue, geom, &subcells[e], dt, resid, &mut w.inner);
            }
            w.mean = element_mean(ue, geom, basis);
        });

        // Phase 2: interface fluxes.
        let mut limited_points = 0usize;
        let blend = |a: f64| if opts.shock_capturing { a } else { 0.0 };
        let coeff = |e: usize, side: usize, k: usize| {
            let node = face_node(nn, side, k);
            let w_end = basis.weights[if side % 2 == 1 { n } else { 0 }];
            2.0 * dt * mesh.geometry[e].inv_jac[node] / w_end
        };
        let mut fine_flux = [vec![[0.0; 4]; nn], vec![[0.0; 4]; nn]];
        for face in &mesh.faces {
            match *face {
                Face::Conforming { a, b, flipped } => {
                    let ga = &mesh.geometry[a.0];
                    let lam_max = if opts.dissipation == DissipationSpeed::FaceMax {
                        (0..nn)
                            .map(|k| {
                                let (_, _, unit) = ga.face_normal(nn, a.1, k);
                                let kb = flip_index(n, k, flipped);
                                eq.wave_speed_unchecked(&self.work[a.0].traces[a.1][k].u, &self.work[b.0].traces[b.1][kb].u, unit)
                            })
                            .fold(0.0, f64::max)
                    } else {
                        0.0
                    };
                    let alpha_f = 0.5 * (blend(alpha[a.0]) + blend(alpha[b.0]));
                    for k in 0..nn {
                        let kb = flip_index(n, k, flipped);
                        let ta = self.work[a.0].traces[a.1][k];
                        let tb = self.work[b.0].traces[b.1][kb];
                        let (_, norm, unit) = ga.face_normal(nn, a.1, k);
                        let lam = match opts.dissipation {
                            DissipationSpeed::PerPoint => eq.wave_speed_unchecked(&ta.u, &tb.u, unit),
                            DissipationSpeed::FaceMax => lam_max,
                        };
                        let f_lw = lw_numerical_flux(&ta, &tb, lam * norm);
                        let f = if opts.positivity {
                            let f_low = eq.rusanov(&ta.u, &tb.u, unit).map(|x| x * norm);
                            let sides = [
                                LimiterSide { u: ta.u, inner: self.work[a.0].inner[a.1][k], coeff: coeff(a.0, a.1, k), sign: 1.0 },
                                LimiterSide { u: tb.u, inner: self.work[b.0].inner[b.1][kb], coeff: coeff(b.0, b.1, kb), sign: -1.0 },
                            ];
                            let (f, th) = limit_blended_interface_flux(&eq, &f_lw, &f_low, alpha_f, &sides)
                                .map_err(|_| StepFailure::LowOrderInadmissible)?;
                            if th[1] < 1.0 {
                                limited_points += 1;
                            }
                            f
                        } else if alpha_f > 0.0 {
                            let f_low = eq.rusanov(&ta.u, &tb.u, unit).map(|x| x * norm);
                            std::array::from_fn(|v| (1.0 - alpha_f) * f_lw[v] + alpha_f * f_low[v])
                        } else {
                            f_lw
                        };
                        self.face_flux[a.0][a.1][k] = f;
                        self.face_flux[b.0][b.1][kb] = f.map(|x| -x);
                    }
                }
                Face::Boundary { elem, side, tag } => {
                    let g = &mesh.geometry[elem];
                    let alpha_f = blend(alpha[elem]);
                    let ghosts: Vec<Trace> = (0..nn)
                        .map(|k| {
                            let (nv, _, unit) = g.face_normal(nn, side, k);
                            let x = g.coords[face_node(nn, side, k)];
                            bc.ghost(tag, x, nv, unit, t, dt, &self.work[elem].traces[side][k])
                        })
                        .collect();
                    let lam_max = if opts.dissipation == DissipationSpeed::FaceMax {
                        (0..nn)
                            .map(|k| {
                                let (_, _, unit) = g.face_normal(nn, side, k);
                                eq.wave_speed_unchecked(&self.work[elem].traces[side][k].u, &ghosts[k].u, unit)
                            })
                            .fold(0.0, f64::max)
                    } else {
                        0.0
                    };
                    for k in 0..nn {
                        let ta = self.work[elem].traces[side][k];
                        let tg = ghosts[k];
                        let (_, norm, unit) = g.face_normal(nn, side, k);
                        let lam = match opts.dissipation {
                            DissipationSpeed::PerPoint => eq.wave_speed_unchecked(&ta.u, &tg.u, unit),
                            DissipationSpeed::FaceMax => lam_max,
                        };
                        let f_lw = lw_numerical_flux(&ta, &tg, lam * norm);
                        let f = if opts.positivity {
                            let f_low = eq.rusanov(&ta.u, &tg.u, unit).map(|x| x * norm);
                            let sides = [LimiterSide {
                                u: ta.u,
                                inner: self.work[elem].inner[side][k],
                                coeff: coeff(elem, side, k),
                                sign: 1.0,
                            }];
                            let (f, th) = limit_blended_interface_flux(&eq, &f_lw, &f_low, alpha_f, &sides)
                                .map_err(|_| StepFailure::LowOrderInadmissible)?;
                            if th[1] < 1.0 {
                                limited_points += 1;
                            }
                            f
                        } else if alpha_f > 0.0 {
                            let f_low = eq.rusanov(&ta.u, &tg.u, unit).map(|x| x * norm);
                            std::array::from_fn(|v| (1.0 - alpha_f) * f_lw[v] + alpha_f * f_low[v])
                        } else {
                            f_lw
                        };
                        self.face_flux[elem][side][k] = f;
                    }
                }
                Face::Mortar { coarse, fine, flipped } => {
                    let (ec, sc) = coarse;
                    let mut pro = prolong_coarse(&mesh.mortar, &self.work[ec].traces[sc]);
                    let cmean = self.work[ec].mean;
                    for s in 0..2 {
                        fix_mortar_states(&eq, &mut pro[s], &cmean);
                        let (ef, sf) = fine[s];
                        let gf = &mesh.geometry[ef];
                        let alpha_f = 0.5 * (blend(alpha[ec]) + blend(alpha[ef]));
                        for m in 0..nn {
                            let kf = flip_index(n, m, flipped);
                            let ta = self.work[ef].traces[sf][kf];
                            let tb = coarse_as_fine_neighbor(&pro[s][m]);
                            let (_, norm, unit) = gf.face_normal(nn, sf, kf);
                            let lam = eq.wave_speed_unchecked(&ta.u, &tb.u, unit);
                            let f_lw = lw_numerical_flux(&ta, &tb, lam * norm);
                            let f = if opts.positivity {
                                let f_low = eq.rusanov(&ta.u, &tb.u, unit).map(|x| x * norm);
                                let sides = [LimiterSide {
                                    u: ta.u,
                                    inner: self.work[ef].inner[sf][kf],
                                    coeff: coeff(ef, sf, kf),
                                    sign: 1.0,
                                }];
                                let (f, th) = limit_blended_interface_flux(&eq, &f_lw, &f_low, alpha_f, &sides)
                                    .map_err(|_| StepFailure::LowOrderInadmissible)?;
                                if th[1] < 1.0 {
                                    limited_points += 1;
                                }
                                f
                            } else if alpha_f > 0.0 {
                                let f_low = eq.rusanov(&ta.u, &tb.u, unit).map(|x| x * norm);
                                std::array::from_fn(|v| (1.0 - alpha_f) * f_lw[v] + alpha_f * f_low[v])
                            } else {
                                f_lw
                            };
                            fine_flux[s][m] = f;
                            self.face_flux[ef][sf][kf] = f;
                        }
                    }
                    let fc = project_to_coarse(&mesh.mortar, [&fine_flux[0], &fine_flux[1]]);
                    self.face_flux[ec][sc].copy_from_slice(&fc);
                }
            }
        }

        // Phase 3: blend residuals, add surface terms, limit.
        let work = &self.work;
        let face_flux = &self.face_flux;
        let mut unew = vec![[0.0; 4]; u.len()];
        let results: Vec<Result<f64, StepFailure>> = unew
            .par_chunks_mut(np)
            .enumerate()
            .map(|(e, out)| {
                let w = &work[e];
                let geom = &mesh.geometry[e];
                let ue = &u[e * np..(e + 1) * np];
                let a = if opts.shock_capturing { alpha[e] } else { 0.0 };
                let mut face = vec![[0.0; 4]; np];
                for side in 0..4 {
                    let w_end = basis.weights[if side % 2 == 1 { n } else { 0 }];
                    for k in 0..nn {
                        let node = face_node(nn, side, k);
                        let c = dt * geom.inv_jac[node] / w_end;
                        for v in 0..4 {
                            face[node][v] -= c * face_flux[e][side][k][v];
                        }
                    }
                }
                for p in 0..np {
                    for v in 0..4 {
                        let r = if a == 0.0 {
                            w.resid_h[p][v]
                        } else if a == 1.0 {
                            w.resid_l[p][v]
                        } else {
                            (1.0 - a) * w.resid_h[p][v] + a * w.resid_l[p][v]
                        };
                        out[p][v] = ue[p][v] + r + face[p][v];
                    }
                }
                let mut mismatch: f64 = 0.0;
                if opts.check_means {
                    let hi: Vec<State> = (0..np).map(|p| std::array::from_fn(|v| ue[p][v] + w.resid_h[p][v] + face[p][v])).collect();
                    let lo: Vec<State> = (0..np).map(|p| std::array::from_fn(|v| ue[p][v] + w.resid_l[p][v] + face[p][v])).collect();
                    let mh = element_mean(&hi, geom, basis);
                    let ml = element_mean(&lo, geom, basis);
                    let abs_mean = |r: &dyn Fn(usize) -> State| {
                        let rs: Vec<State> = (0..np).map(|p| r(p).map(f64::abs)).collect();
                        element_mean(&rs, geom, basis)
                    };
                    let sh = abs_mean(&|p| w.resid_h[p]);
                    let sl = abs_mean(&|p| w.resid_l[p]);
                    let sf = abs_mean(&|p| face[p]);
                    for v in 0..4 {
                        let scale = w.mean[v].abs().max(sh[v]).max(sl[v]).max(sf[v]).max(1e-300);
                        mismatch = mismatch.max((mh[v] - ml[v]).abs() / scale);
                    }
                }
                if out.iter().any(|s| !s.iter().all(|x| x.is_finite())) {
                    return Err(StepFailure::NonFinite { element: e });
                }
                if opts.positivity {
                    let mean = element_mean(out, geom, basis);
                    match scaling_limiter(&eq, out, &mean) {
                        Ok(_) => {}
                        Err(ShockCaptureError::InadmissibleMean { .. }) | Err(ShockCaptureError::LowOrderInadmissible) => {
                            return Err(StepFailure::InadmissibleMean { element: e })
                        }
                    }
                }
                Ok(mismatch)
            })
            .collect();
        let mut mean_mismatch: f64 = 0.0;
        for r in results {
            mean_mismatch = mean_mismatch.max(r?);
        }
        let mut error = ErrorAccumulator::default();
        let mut inadmissible = false;
        for w in &self.work {
            error.merge(&w.err);
            inadmissible |= opts.reject_shifted_states && !w.admissible;
        }
        Ok(StepOutput { u: unew, error, inadmissible, mean_mismatch, limited_points })
    }

    /// Outward interface fluxes of the last step (per element and side).
    pub fn last_face_fluxes(&self) -> &[[Vec<State>; 4]] {
        &self.face_flux
    }
}

/// Scaled outward normal and unit normal helpers for tests and boundary
/// closures.
pub fn outward_normal(mesh: &Mesh, e: usize, side: usize, k: usize) -> (Point, f64, Point) {
    let nn = mesh.basis.n_nodes();
    let _ = (side_dir(side), side_sign(side));
    mesh.geometry[e].face_normal(nn, side, k)
}
