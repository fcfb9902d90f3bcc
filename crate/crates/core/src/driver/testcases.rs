//! Library of initial and boundary data for the benchmark problems.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::driver::config::BoundaryKind;
use crate::equations::{Euler, Primitive, State};
use crate::mesh::Point;

/// Conserved state as a function of position and time.
pub type StateFn = Arc<dyn Fn(Point, f64) -> State + Send + Sync>;

/// Mesh defaults of a test case.
#[derive(Debug, Clone)]
pub struct CaseMesh {
    pub builder: &'static str,
    pub cells: [usize; 2],
    pub bounds: Option<[f64; 4]>,
    pub periodic: Option<[bool; 2]>,
    /// Cells removed from the structured grid, as `(i, j)` predicates.
    pub mask: Option<fn(usize, usize) -> bool>,
}

pub struct TestCase {
    pub name: String,
    pub initial: StateFn,
    /// Boundary data for Dirichlet (inflow) sides.
    pub boundary_state: StateFn,
    pub exact: Option<StateFn>,
    /// Boundary kind for each tag name used by the default mesh.
    pub boundary_kinds: Vec<(&'static str, BoundaryKind)>,
    pub mesh: CaseMesh,
    pub final_time: f64,
}

impl std::fmt::Debug for TestCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestCase").field("name", &self.name).field("mesh", &self.mesh).finish()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("unknown test case '{0}'")]
pub struct UnknownCase(pub String);

pub const CASE_NAMES: [&str; 7] = ["freestream", "couette", "vortex", "jet", "kh", "dmr", "forward_step"];

/// Isentropic vortex constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VortexParams {
    pub mach: f64,
    pub t0: f64,
    pub p0: f64,
    pub r_gas: f64,
    pub beta: f64,
    pub radius: f64,
    pub length: f64,
}

impl Default for VortexParams {
    fn default() -> Self {
        Self { mach: 0.5, t0: 300.0, p0: 1e5, r_gas: 287.15, beta: 0.2, radius: 0.005, length: 0.1 }
    }
}

impl VortexParams {
    pub fn rho0(&self) -> f64 {
        self.p0 / (self.r_gas * self.t0)
    }

    pub fn u0(&self, gamma: f64) -> f64 {
        self.mach * (gamma * self.r_gas * self.t0).sqrt()
    }

    /// One period of the vortex crossing the box.
    pub fn period(&self, gamma: f64) -> f64 {
        self.length / self.u0(gamma)
    }

    /// Primitive state of the translated vortex, using the nearest periodic
    /// image of the vortex centre.
    pub fn primitive(&self, gamma: f64, x: Point, t: f64) -> Primitive {
        let l = self.length;
        let wrap = |d: f64| d - l * (d / l).round();
        let u0 = self.u0(gamma);
        let dx = wrap(x[0] - u0 * t - 0.5 * l);
        let dy = wrap(x[1] - 0.5 * l);
        let r2 = (dx * dx + dy * dy) / (self.radius * self.radius);
        let cp = self.r_gas * gamma / (gamma - 1.0);
        let e = (-0.5 * r2).exp();
        let temp = self.t0 - (u0 * self.beta).powi(2) / (2.0 * cp) * (-r2).exp();
        let rho = self.rho0() * (temp / self.t0).powf(1.0 / (gamma - 1.0));
        [
            rho,
            u0 * (1.0 - self.beta * dy / self.radius * e),
            u0 * self.beta * dx / self.radius * e,
            rho * self.r_gas * temp,
        ]
    }
}

/// Steady Couette state between the circles `r = 1` and `r = 4`.
pub fn couette_primitive(x: Point) -> Primitive {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let th = x[1].atan2(x[0]);
    let vt = (16.0 / r - r) / 75.0;
    let p = 1.0 + (0.5 * r * r - 32.0 * r.ln() - 128.0 / (r * r)) / (75.0 * 75.0);
    [1.0, -th.sin() * vt, th.cos() * vt, p]
}

pub const JET_AMBIENT: Primitive = [0.5, 0.0, 0.0, 0.4127];
pub const JET_INFLOW: Primitive = [5.0, 800.0, 0.0, 0.4127];

/// Left boundary state of the jet. By default `|y| <= 0.05` carries the
/// ambient state and the rest the jet; `centered` swaps the two.
pub fn jet_boundary(x: Point, centered: bool) -> Primitive {
    let inside = x[1].abs() <= 0.05;
    if inside == centered {
        JET_INFLOW
    } else {
        JET_AMBIENT
    }
}

pub fn kh_primitive(x: Point) -> Primitive {
    let b = (15.0 * x[1] + 7.5).tanh() - (15.0 * x[1] - 7.5).tanh();
    [0.5 + 0.75 * b, 0.5 * (b - 1.0), 0.1 * (2.0 * PI * x[0]).sin(), 1.0]
}

/// Double Mach reflection data: post-shock state left of the moving shock.
pub fn dmr_primitive(x: Point, t: f64) -> Primitive {
    if x[0] < 1.0 / 6.0 + (x[1] + 20.0 * t) / 3f64.sqrt() {
        [8.0, 8.25 * (PI / 6.0).cos(), -8.25 * (PI / 6.0).sin(), 116.5]
    } else {
        [1.4, 0.0, 0.0, 1.0]
    }
}

pub const FREESTREAM: Primitive = [1.0, 0.1, -0.2, 10.0];
pub const STEP_INFLOW: Primitive = [1.4, 3.0, 0.0, 1.0];

fn step_mask(i: usize, j: usize) -> bool {
    // 15 x 5 cells of size 0.2; the step occupies [0.6, 3] x [0, 0.2].
    i < 3 || j > 0
}

fn from_prim(eq: Euler, f: impl Fn(Point, f64) -> Primitive + Send + Sync + 'static) -> StateFn {
    Arc::new(move |x, t| eq.prim2cons(&f(x, t)))
}

/// Build a test case by name.
pub fn testcase_library(name: &str, eq: Euler, r_gas: f64, jet_centered: bool) -> Result<TestCase, UnknownCase> {
    use BoundaryKind::*;
    let cartesian = |cells: [usize; 2], bounds: [f64; 4]| CaseMesh {
        builder: "cartesian",
        cells,
        bounds: Some(bounds),
        periodic: None,
        mask: None,
    };
    let four = |k: BoundaryKind| vec![("left", k), ("right", k), ("bottom", k), ("top", k)];
    let case = match name {
        "freestream" => {
            let s = from_prim(eq, |_, _| FREESTREAM);
            TestCase {
                name: name.into(),
                initial: s.clone(),
                boundary_state: s.clone(),
                exact: Some(s),
                boundary_kinds: [four(Dirichlet), vec![("inner", Dirichlet), ("outer", Dirichlet), ("obstacle", Dirichlet)]].concat(),
                mesh: CaseMesh { builder: "warped_square", cells: [4, 4], bounds: None, periodic: None, mask: None },
                final_time: 1.0,
            }
        }
        "couette" => {
            let s = from_prim(eq, |x, _| couette_primitive(x));
            TestCase {
                name: name.into(),
                initial: s.clone(),
                boundary_state: s.clone(),
                exact: Some(s),
                boundary_kinds: vec![("inner", Dirichlet), ("outer", Dirichlet)],
                mesh: CaseMesh { builder: "annulus", cells: [8, 8], bounds: None, periodic: None, mask: None },
                final_time: 1.0,
            }
        }
        "vortex" => {
            let vp = VortexParams { r_gas, ..VortexParams::default() };
            let g = eq.gamma;
            let s = from_prim(eq, move |x, t| vp.primitive(g, x, t));
            TestCase {
                name: name.into(),
                initial: s.clone(),
                boundary_state: s.clone(),
                exact: Some(s),
                boundary_kinds: four(Dirichlet),
                mesh: CaseMesh { builder: "distorted_box", cells: [8, 8], bounds: None, periodic: None, mask: None },
                final_time: vp.period(g),
            }
        }
        "jet" => TestCase {
            name: name.into(),
            initial: from_prim(eq, |_, _| JET_AMBIENT),
            boundary_state: from_prim(eq, move |x, _| jet_boundary(x, jet_centered)),
            exact: None,
            boundary_kinds: vec![("left", Dirichlet), ("right", Outflow), ("bottom", Outflow), ("top", Outflow)],
            mesh: cartesian([64, 64], [0.0, 1.0, -0.5, 0.5]),
            final_time: 1e-3,
        },
        "kh" => TestCase {
            name: name.into(),
            initial: from_prim(eq, |x, _| kh_primitive(x)),
            boundary_state: from_prim(eq, |x, _| kh_primitive(x)),
            exact: None,
            boundary_kinds: four(Dirichlet),
            mesh: CaseMesh { periodic: Some([true, true]), ..cartesian([16, 16], [-1.0, 1.0, -1.0, 1.0]) },
            final_time: 3.0,
        },
        "dmr" => TestCase {
            name: name.into(),
            initial: from_prim(eq, dmr_primitive),
            boundary_state: from_prim(eq, dmr_primitive),
            exact: None,
            boundary_kinds: vec![("left", Dirichlet), ("right", Outflow), ("bottom", DmrBottom), ("top", Dirichlet)],
            mesh: cartesian([16, 5], [0.0, 4.0, 0.0, 1.0]),
            final_time: 0.2,
        },
        "forward_step" => TestCase {
            name: name.into(),
            initial: from_prim(eq, |_, _| STEP_INFLOW),
            boundary_state: from_prim(eq, |_, _| STEP_INFLOW),
            exact: None,
            boundary_kinds: vec![
                ("left", Dirichlet),
                ("right", Outflow),
                ("bottom", SlipWall),
                ("top", SlipWall),
                ("obstacle", SlipWall),
            ],
            mesh: CaseMesh { mask: Some(step_mask), ..cartesian([15, 5], [0.0, 3.0, 0.0, 1.0]) },
            final_time: 3.0,
        },
        other => return Err(UnknownCase(other.to_string())),
    };
    Ok(case)
}
