//! Ghost traces for physical boundaries. Every kind produces a full
//! `(fout, U, u)` trace so that the interior numerical flux is reused.

use crate::basis::NodalBasis1D;
use crate::driver::config::BoundaryKind;
use crate::driver::testcases::StateFn;
use crate::equations::Euler;
use crate::lwfr::Trace;
use crate::mesh::Point;
use crate::solver::BoundaryTraces;

/// Boundary conditions for every tag of a mesh.
pub struct BoundarySet {
    pub eq: Euler,
    /// Kind per tag id; `None` for tags that never appear on a boundary.
    pub kinds: Vec<Option<BoundaryKind>>,
    pub state: StateFn,
    /// GLL rule used for time averages of Dirichlet data.
    time_rule: NodalBasis1D,
}

impl BoundarySet {
    pub fn new(eq: Euler, kinds: Vec<Option<BoundaryKind>>, state: StateFn, time_rule: NodalBasis1D) -> Self {
        Self { eq, kinds, state, time_rule }
    }

    fn dirichlet(&self, x: Point, normal: Point, t: f64, dt: f64) -> Trace {
        let u = (self.state)(x, t);
        let mut uave = [0.0; 4];
        let mut fbar = [0.0; 4];
        for (tau, w) in self.time_rule.nodes.iter().zip(&self.time_rule.weights) {
            let ub = if *tau == -1.0 { u } else { (self.state)(x, t + 0.5 * dt * (tau + 1.0)) };
            let f = self.eq.normal_flux(&ub, normal);
            for v in 0..4 {
                uave[v] += 0.5 * w * ub[v];
                fbar[v] += 0.5 * w * f[v];
            }
        }
        Trace { fout: fbar.map(|x| -x), uave, u }
    }

    fn outflow(inner: &Trace) -> Trace {
        Trace { fout: inner.fout.map(|x| -x), uave: inner.uave, u: inner.u }
    }

    fn slip_wall(unit: Point, inner: &Trace) -> Trace {
        Trace {
            fout: Euler::reflect(&inner.fout, unit),
            uave: Euler::reflect(&inner.uave, unit),
            u: Euler::reflect(&inner.u, unit),
        }
    }
}

impl BoundaryTraces for BoundarySet {
    fn ghost(&self, tag: usize, x: Point, normal: Point, unit: Point, t: f64, dt: f64, inner: &Trace) -> Trace {
        match self.kinds.get(tag).copied().flatten() {
            Some(BoundaryKind::Dirichlet) => self.dirichlet(x, normal, t, dt),
            Some(BoundaryKind::Outflow) => Self::outflow(inner),
            Some(BoundaryKind::SlipWall) => Self::slip_wall(unit, inner),
            Some(BoundaryKind::DmrBottom) => {
                if x[0] < 1.0 / 6.0 {
                    Self::outflow(inner)
                } else {
                    Self::slip_wall(unit, inner)
                }
            }
            None => panic!("boundary tag {tag} has no boundary condition"),
        }
    }
}
