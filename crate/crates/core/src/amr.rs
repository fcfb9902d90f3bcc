//! Adaptive mesh refinement: solution transfer, mortar coupling of
//! non-conforming faces, the Löhner indicator and the three-level
//! controller.

use crate::basis::{apply_2d, MortarOperators1D, NodalBasis1D};
use crate::equations::{Euler, State};
use crate::lwfr::{element_mean, Trace};
use crate::mesh::{AdaptFlag, ElementGeometry, Mesh, Origin};
use crate::shockcapture::{scale_toward, IndicatorVariable, SCALING_FLOOR};

/// Löhner's normalized second difference, maximized over the element's
/// interior stencils in both directions.
pub fn lohner_indicator(eq: &Euler, u: &[State], basis: &NodalBasis1D, variable: IndicatorVariable, f_wave: f64) -> f64 {
    let nn = basis.n_nodes();
    let q: Vec<f64> = u.iter().map(|s| variable.eval(eq, s)).collect();
    let mut alpha: f64 = 0.0;
    for dir in 0..2 {
        for line in 0..nn {
            for l in 1..nn.saturating_sub(1) {
                let at = |m: usize| if dir == 0 { q[m + nn * line] } else { q[line + nn * m] };
                alpha = alpha.max(lohner_value(at(l - 1), at(l), at(l + 1), f_wave));
            }
        }
    }
    alpha
}

/// `|q+ - 2q + q-| / (|q+ - q| + |q - q-| + f_wave (|q+| + 2|q| + |q-|))`.
pub fn lohner_value(qm: f64, q: f64, qp: f64, f_wave: f64) -> f64 {
    let num = (qp - 2.0 * q + qm).abs();
    let den = (qp - q).abs() + (q - qm).abs() + f_wave * (qp.abs() + 2.0 * q.abs() + qm.abs());
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Three-level refinement controller.
#[derive(Debug, Clone, PartialEq)]
pub struct AmrController {
    pub base_level: usize,
    pub med_level: usize,
    pub max_level: usize,
    pub med_threshold: f64,
    pub max_threshold: f64,
}

impl AmrController {
    /// Levels are normalized so that `base <= med <= max`.
    pub fn new(base_level: usize, med_level: usize, max_level: usize, med_threshold: f64, max_threshold: f64) -> Self {
        let med_level = med_level.max(base_level);
        let max_level = max_level.max(med_level);
        Self { base_level, med_level, max_level, med_threshold, max_threshold }
    }

    pub fn target_level(&self, alpha: f64) -> usize {
        if alpha <= self.med_threshold {
            self.base_level
        } else if alpha <= self.max_threshold {
            self.med_level
        } else {
            self.max_level
        }
    }

    pub fn flags(&self, alpha: &[f64], mesh: &Mesh) -> Vec<AdaptFlag> {
        alpha
            .iter()
            .enumerate()
            .map(|(e, &a)| {
                let target = self.target_level(a);
                let level = mesh.level(e);
                if level < target {
                    AdaptFlag::Refine
                } else if level > target {
                    AdaptFlag::Coarsen
                } else {
                    AdaptFlag::Keep
                }
            })
            .collect()
    }
}

/// Children of a refined element: interpolate `J u` and divide by the
/// child Jacobian expressed in parent reference coordinates (`4 J_child`).
pub fn refine_transfer(
    u: &[State],
    parent: &ElementGeometry,
    children: [&ElementGeometry; 4],
    ops: &MortarOperators1D,
) -> [Vec<State>; 4] {
    let ju: Vec<State> = u.iter().zip(&parent.jac).map(|(s, j)| s.map(|x| x * j)).collect();
    std::array::from_fn(|s| {
        let c = apply_2d(&ops.interp[s & 1], &ops.interp[s >> 1], &ju);
        c.iter().zip(&children[s].inv_jac).map(|(x, ij)| x.map(|v| 0.25 * v * ij)).collect()
    })
}

/// Parent of four coarsened siblings: project `4 J_child u_child` and
/// divide by the parent Jacobian.
pub fn coarsen_transfer(
    children_u: [&[State]; 4],
    children: [&ElementGeometry; 4],
    parent: &ElementGeometry,
    ops: &MortarOperators1D,
) -> Vec<State> {
    let np = parent.jac.len();
    let mut acc = vec![[0.0; 4]; np];
    for s in 0..4 {
        let ju: Vec<State> = children_u[s]
            .iter()
            .zip(&children[s].jac)
            .map(|(x, j)| x.map(|v| 4.0 * v * j))
            .collect();
        let p = apply_2d(&ops.proj[s & 1], &ops.proj[s >> 1], &ju);
        for (a, b) in acc.iter_mut().zip(&p) {
            for v in 0..4 {
                a[v] += b[v];
            }
        }
    }
    acc.iter().zip(&parent.inv_jac).map(|(x, ij)| x.map(|v| v * ij)).collect()
}

/// Coarse traces interpolated to the two mortar halves (coarse orientation
/// and coarse metric scaling).
pub fn prolong_coarse(ops: &MortarOperators1D, coarse: &[Trace]) -> [Vec<Trace>; 2] {
    let nn = coarse.len();
    std::array::from_fn(|s| {
        let v = &ops.interp[s];
        (0..nn)
            .map(|m| {
                let mut t = Trace::default();
                for k in 0..nn {
                    let c = v[(m, k)];
                    for x in 0..4 {
                        t.fout[x] += c * coarse[k].fout[x];
                        t.uave[x] += c * coarse[k].uave[x];
                        t.u[x] += c * coarse[k].u[x];
                    }
                }
                t
            })
            .collect()
    })
}

/// Express a prolonged coarse trace in fine orientation and fine metric
/// scaling: the coarse outward flux is opposite and twice as large.
#[inline]
pub fn coarse_as_fine_neighbor(t: &Trace) -> Trace {
    Trace { fout: t.fout.map(|x| 0.5 * x), uave: t.uave, u: t.u }
}

/// Coarse outward flux from the fine outward mortar fluxes:
/// `F*_Gamma = -2 sum_s P_s F*_s`.
pub fn project_to_coarse(ops: &MortarOperators1D, fine: [&[State]; 2]) -> Vec<State> {
    let nn = fine[0].len();
    (0..nn)
        .map(|p| {
            let mut f = [0.0; 4];
            for s in 0..2 {
                for q in 0..nn {
                    let c = -2.0 * ops.proj[s][(p, q)];
                    for v in 0..4 {
                        f[v] += c * fine[s][q][v];
                    }
                }
            }
            f
        })
        .collect()
}

/// Unit and scaled outward normal of a fine face point.
#[derive(Debug, Clone, Copy)]
pub struct FaceMetric {
    pub norm: f64,
    pub unit: [f64; 2],
}

/// Mortar coupling with the plain LW numerical flux (no blending). The
/// fine traces and metrics are given in mortar order. Returns the fine
/// outward fluxes and the coarse outward flux.
pub fn mortar_prolong_and_flux(
    eq: &Euler,
    ops: &MortarOperators1D,
    coarse: &[Trace],
    fine: [&[Trace]; 2],
    fine_metric: [&[FaceMetric]; 2],
) -> ([Vec<State>; 2], Vec<State>) {
    let pro = prolong_coarse(ops, coarse);
    let fluxes: [Vec<State>; 2] = std::array::from_fn(|s| {
        (0..coarse.len())
            .map(|m| {
                let b = coarse_as_fine_neighbor(&pro[s][m]);
                let a = &fine[s][m];
                let fm = &fine_metric[s][m];
                let lam = eq.wave_speed_unchecked(&a.u, &b.u, fm.unit) * fm.norm;
                crate::lwfr::lw_numerical_flux(a, &b, lam)
            })
            .collect()
    });
    let coarse_flux = project_to_coarse(ops, [&fluxes[0], &fluxes[1]]);
    (fluxes, coarse_flux)
}

/// Make prolonged mortar states admissible by scaling toward the coarse
/// element mean.
pub fn fix_mortar_states(eq: &Euler, states: &mut [Trace], coarse_mean: &State) {
    if states.iter().all(|t| eq.is_admissible(&t.u)) {
        return;
    }
    let eps_rho = SCALING_FLOOR * coarse_mean[0];
    let eps_p = SCALING_FLOOR * eq.pressure(coarse_mean);
    for t in states.iter_mut() {
        if !eq.is_admissible(&t.u) {
            let mut one = [t.u];
            scale_toward(eq, &mut one, coarse_mean, eps_rho, eps_p);
            t.u = one[0];
        }
    }
}

/// Post-refinement positivity: scale all children jointly toward the
/// parent mean (a common factor keeps the total unchanged).
pub fn post_refine_positivity(eq: &Euler, children: &mut [Vec<State>; 4], parent_mean: &State) -> f64 {
    if children.iter().all(|c| c.iter().all(|s| eq.is_admissible(s))) {
        return 1.0;
    }
    let eps_rho = SCALING_FLOOR * parent_mean[0];
    let eps_p = SCALING_FLOOR * eq.pressure(parent_mean);
    let mut all: Vec<State> = children.iter().flat_map(|c| c.iter().copied()).collect();
    let theta = scale_toward(eq, &mut all, parent_mean, eps_rho, eps_p);
    let np = children[0].len();
    for (s, c) in children.iter_mut().enumerate() {
        c.copy_from_slice(&all[s * np..(s + 1) * np]);
    }
    theta
}

/// Transfer a solution field across an adaptation step. `old_geometry` is
/// the geometry before adaptation; `mesh` is already adapted.
pub fn transfer_solution(
    eq: &Euler,
    mesh: &Mesh,
    old_geometry: &[ElementGeometry],
    old_u: &[State],
    origins: &[Origin],
) -> Vec<State> {
    let basis = &mesh.basis;
    let np = basis.n_nodes() * basis.n_nodes();
    let mut out = vec![[0.0; 4]; mesh.n_elements() * np];
    let old = |e: usize| &old_u[e * np..(e + 1) * np];
    let mut e = 0;
    while e < origins.len() {
        match origins[e] {
            Origin::Kept(o) => {
                out[e * np..(e + 1) * np].copy_from_slice(old(o));
                e += 1;
            }
            Origin::Refined { parent, .. } => {
                // The four children of one parent are consecutive in Morton order.
                let ids: [usize; 4] = std::array::from_fn(|s| e + s);
                debug_assert!(ids.iter().enumerate().all(|(s, &i)| origins[i] == Origin::Refined { parent, child: s }));
                let kids = [&mesh.geometry[ids[0]], &mesh.geometry[ids[1]], &mesh.geometry[ids[2]], &mesh.geometry[ids[3]]];
                let mut children = refine_transfer(old(parent), &old_geometry[parent], kids, &mesh.mortar);
                let mean = element_mean(old(parent), &old_geometry[parent], basis);
                post_refine_positivity(eq, &mut children, &mean);
                for (s, c) in children.iter().enumerate() {
                    out[(e + s) * np..(e + s + 1) * np].copy_from_slice(c);
                }
                e += 4;
            }
            Origin::Coarsened { children } => {
                let cu = [old(children[0]), old(children[1]), old(children[2]), old(children[3])];
                let cg = [
                    &old_geometry[children[0]],
                    &old_geometry[children[1]],
                    &old_geometry[children[2]],
                    &old_geometry[children[3]],
                ];
                let mut u = coarsen_transfer(cu, cg, &mesh.geometry[e], &mesh.mortar);
                if u.iter().any(|s| !eq.is_admissible(s)) {
                    let mean = element_mean(&u, &mesh.geometry[e], basis);
                    let eps_rho = SCALING_FLOOR * mean[0];
                    let eps_p = SCALING_FLOOR * eq.pressure(&mean);
                    scale_toward(eq, &mut u, &mean, eps_rho, eps_p);
                }
                out[e * np..(e + 1) * np].copy_from_slice(&u);
                e += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lohner_examples() {
        assert_eq!(lohner_value(1.0, 1.0, 1.0, 0.2), 0.0);
        assert_eq!(lohner_value(1.0, 2.0, 3.0, 0.2), 0.0);
        assert!((lohner_value(0.0, 1.0, 0.0, 0.2) - 2.0 / 2.4).abs() < 1e-15);
    }

    #[test]
    fn controller_bands() {
        let c = AmrController::new(0, 3, 6, 0.05, 0.1);
        assert_eq!(c.target_level(0.0), 0);
        assert_eq!(c.target_level(0.07), 3);
        assert_eq!(c.target_level(0.5), 6);
        let k = AmrController::new(4, 0, 8, 0.0003, 0.003);
        assert_eq!(k.med_level, 4);
    }
}
