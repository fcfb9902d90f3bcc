//! Run-level behaviour: boundaries, configuration, output and case data.

use std::f64::consts::PI;
use std::process::Command;
use std::sync::Arc;

use lwfr::amr::{lohner_value, AmrController};
use lwfr::basis::gll_basis;
use lwfr::driver::config::BoundaryKind;
use lwfr::driver::output::{csv_string, vtk_string};
use lwfr::driver::testcases::{couette_primitive, dmr_primitive, jet_boundary, testcase_library, VortexParams, JET_AMBIENT, JET_INFLOW};
use lwfr::driver::boundary::BoundarySet;
use lwfr::driver::{RunConfig, Simulation};
use lwfr::equations::{Euler, State};
use lwfr::lwfr::Trace;
use lwfr::mesh::{build_structured, StructuredSpec, Transform};
use lwfr::shockcapture::{modal_energy, smooth_alpha, smoothness_alpha, IndicatorConfig};
use lwfr::solver::BoundaryTraces;
use lwfr::timestep::{cfl_dt, ErrorAccumulator, PidController};

const EQ: Euler = Euler { gamma: 1.4 };

fn sample_trace() -> Trace {
    let u = EQ.prim2cons(&[1.2, 0.7, -0.4, 2.0]);
    let n = [0.6, 0.8];
    Trace { fout: EQ.normal_flux(&u, n), uave: u.map(|x| 1.01 * x), u }
}

fn boundary(kind: BoundaryKind) -> BoundarySet {
    let state = Arc::new(|_: [f64; 2], _: f64| EQ.prim2cons(&[1.0, 0.0, 0.0, 1.0]));
    BoundarySet::new(EQ, vec![Some(kind)], state, gll_basis(2).unwrap())
}

#[test]
fn slip_wall_ghost_reflects_velocity() {
    let inner = sample_trace();
    let unit = [0.6, 0.8];
    let g = boundary(BoundaryKind::SlipWall).ghost(0, [0.5, 0.5], unit, unit, 0.0, 1e-3, &inner);
    let w = EQ.cons2prim(&inner.u);
    let vn = w[1] * unit[0] + w[2] * unit[1];
    let expect = [w[1] - 2.0 * vn * unit[0], w[2] - 2.0 * vn * unit[1]];
    let gw = EQ.cons2prim(&g.u);
    assert!((gw[1] - expect[0]).abs() < 1e-14 && (gw[2] - expect[1]).abs() < 1e-14);
    assert!((gw[0] - w[0]).abs() < 1e-15 && (gw[3] - w[3]).abs() < 1e-13);
}

#[test]
fn outflow_ghost_copies_interior_trace() {
    let inner = sample_trace();
    let g = boundary(BoundaryKind::Outflow).ghost(0, [0.5, 0.5], [0.6, 0.8], [0.6, 0.8], 0.0, 1e-3, &inner);
    assert_eq!(g.u, inner.u);
    assert_eq!(g.uave, inner.uave);
    // Seen from the ghost side the outward flux changes sign, so the
    // interface flux reduces to the interior one.
    assert_eq!(g.fout, inner.fout.map(|x| -x));
}

#[test]
fn dmr_bottom_switches_at_one_sixth() {
    let inner = sample_trace();
    let b = boundary(BoundaryKind::DmrBottom);
    let n = [0.0, -1.0];
    let left = b.ghost(0, [0.1, 0.0], n, n, 0.0, 1e-3, &inner);
    let right = b.ghost(0, [0.2, 0.0], n, n, 0.0, 1e-3, &inner);
    assert_eq!(left.u, inner.u);
    assert_eq!(right.u, Euler::reflect(&inner.u, n));
}

#[test]
fn dirichlet_ghost_of_constant_data_is_that_state() {
    let b = boundary(BoundaryKind::Dirichlet);
    let n = [1.0, 0.0];
    let g = b.ghost(0, [0.0, 0.0], n, n, 0.3, 1e-2, &sample_trace());
    let c = EQ.prim2cons(&[1.0, 0.0, 0.0, 1.0]);
    for v in 0..4 {
        assert!((g.u[v] - c[v]).abs() < 1e-15 && (g.uave[v] - c[v]).abs() < 1e-15);
    }
}

#[test]
fn dmr_data_switches_along_the_moving_shock() {
    let post = [8.0, 8.25 * (PI / 6.0).cos(), -8.25 * (PI / 6.0).sin(), 116.5];
    let t = 0.05;
    let front = 1.0 / 6.0 + (0.5 + 20.0 * t) / 3f64.sqrt();
    assert_eq!(dmr_primitive([front - 1e-9, 0.5], t), post);
    assert_eq!(dmr_primitive([front + 1e-9, 0.5], t), [1.4, 0.0, 0.0, 1.0]);
}

#[test]
fn jet_inlet_profile() {
    assert_eq!(jet_boundary([0.0, 0.0], false), JET_AMBIENT);
    assert_eq!(jet_boundary([0.0, 0.3], false), JET_INFLOW);
    assert_eq!(jet_boundary([0.0, 0.0], true), JET_INFLOW);
    assert_eq!(jet_boundary([0.0, 0.05], false), JET_AMBIENT);
    assert_eq!(jet_boundary([0.0, -0.0500001], false), JET_INFLOW);
}

#[test]
fn couette_velocity_is_tangential() {
    let w = couette_primitive([1.0, 0.0]);
    let vt = (16.0 - 1.0) / 75.0;
    assert!(w[1].abs() < 1e-15);
    assert!((w[2] - vt).abs() < 1e-15);
    // No slip on the outer cylinder.
    let w = couette_primitive([0.0, 4.0]);
    assert!(w[1].abs() < 1e-15 && w[2].abs() < 1e-15);
}

#[test]
fn vortex_reference_density() {
    let vp = VortexParams::default();
    assert!((vp.rho0() - 1.160_83).abs() < 1e-5);
    let far = vp.primitive(1.4, [0.0, 0.0], 0.0);
    assert!((far[0] - vp.rho0()).abs() < 1e-9 * vp.rho0());
    assert!((vp.primitive(1.4, [0.05 + vp.u0(1.4) * 0.1, 0.05], 0.1)[0] - vp.primitive(1.4, [0.05, 0.05], 0.0)[0]).abs() < 1e-12);
}

#[test]
fn every_case_name_resolves() {
    for name in lwfr::driver::testcases::CASE_NAMES {
        assert!(testcase_library(name, EQ, 287.15, false).is_ok(), "{name}");
    }
    assert!(testcase_library("sod", EQ, 287.15, false).is_err());
}

#[test]
fn cfl_step_on_a_single_stagnant_element() {
    let basis = gll_basis(1).unwrap();
    let t = Transform::Cartesian { x: [0.0, 1.0], y: [0.0, 1.0] };
    let mesh = build_structured(&StructuredSpec::new(t, 1, 1), &basis).unwrap();
    let u = vec![EQ.prim2cons(&[1.0, 0.0, 0.0, 1.0]); 4];
    let dt = cfl_dt(&EQ, &u, &mesh.geometry, 1, 0.3).unwrap();
    assert!((dt - 0.3 / (4.0 * 1.4f64.sqrt())).abs() < 1e-15);
    assert!(cfl_dt(&EQ, &u, &mesh.geometry, 1, 0.0).is_err());
}

#[test]
fn error_contribution_examples() {
    let z: State = [0.0; 4];
    assert_eq!(ErrorAccumulator::contribution(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], 1e-6, 1e-6), 0.0);
    assert!((ErrorAccumulator::contribution(&[1.0, 0.0, 0.0, 0.0], &z, 1.0, 1.0) - 0.25).abs() < 1e-16);
}

#[test]
fn pid_controller_decisions() {
    let mut pid = PidController::new(3);
    let mut acc = ErrorAccumulator::default();
    acc.accumulate(&[[1.0; 4]], &[[1.0; 4]], 1.0, 0.0);
    acc.sum = acc.count as f64;
    let d = pid.decide(&acc, false, 0.1);
    assert!(d.accept && (d.factor - 1.0).abs() < 1e-15 && (d.dt_next - 0.1).abs() < 1e-16);

    acc.sum = 1e6 * acc.count as f64;
    let d = pid.decide(&acc, false, 0.1);
    assert!(!d.accept && d.factor < 0.81);

    acc.sum = 1e-4 * acc.count as f64;
    let d = pid.decide(&acc, true, 0.1);
    assert!(!d.accept && d.factor <= 0.5);

    // Same state, same decision.
    let mut a = PidController::new(4);
    let mut b = a.clone();
    assert_eq!(a.decide(&acc, false, 0.2), b.decide(&acc, false, 0.2));
}

#[test]
fn indicator_examples() {
    let basis = gll_basis(4).unwrap();
    let cfg = IndicatorConfig::default();
    let constant = vec![EQ.prim2cons(&[1.0, 0.2, 0.1, 1.0]); 25];
    assert_eq!(smoothness_alpha(&EQ, &constant, &basis, &cfg), 0.0);
    assert!((cfg.logistic(cfg.threshold(4), 4) - 0.5).abs() < 1e-15);

    // Highest Legendre mode in xi, constant in eta.
    let top: Vec<f64> = (0..25).map(|p| lwfr::basis::legendre(4, basis.nodes[p % 5]).0).collect();
    assert!((modal_energy(&top, &basis) - 1.0).abs() < 1e-12);
    assert!(cfg.logistic(1.0, 4) > 1.0 - 1e-6);

    let raw = [0.0, 1.0];
    let smoothed = smooth_alpha(&raw, &[vec![1], vec![0]]);
    assert!((smoothed[0] - 0.5).abs() < 1e-15 && smoothed[1] == 1.0);
    assert_eq!(smooth_alpha(&[0.0; 3], &[vec![1], vec![0, 2], vec![1]]), vec![0.0; 3]);
}

#[test]
fn lohner_and_controller_examples() {
    assert!((lohner_value(0.0, 1.0, 0.0, 0.2) - 2.0 / 2.4).abs() < 1e-15);
    assert_eq!(lohner_value(3.0, 3.0, 3.0, 0.2), 0.0);
    assert_eq!(lohner_value(1.0, 2.0, 3.0, 0.2), 0.0);
    let c = AmrController::new(0, 1, 2, 0.1, 0.5);
    assert_eq!(c.target_level(0.0), 0);
    assert_eq!(c.target_level(0.3), 1);
    assert_eq!(c.target_level(0.9), 2);
}

#[test]
fn unknown_case_is_rejected() {
    let Err(err) = Simulation::from_toml("[case]\nname = \"nonexistent\"\n") else { panic!("unknown case accepted") };
    assert!(err.to_string().contains("nonexistent"), "{err}");
    assert!(RunConfig::from_toml("[case]\nname = \"vortex\"\n[mesh]\nbogus = 1\n").is_err());
    assert!(RunConfig::from_toml("[case]\nname = \"vortex\"\n[time]\ncfl = 0.0\n").is_err());
    assert!(RunConfig::from_toml("[mesh]\ndegree = 3\n").is_err());
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("lwfr-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn cli_fails_cleanly_on_unknown_case() {
    let dir = temp_dir("cli-bad");
    let cfg = dir.join("bad.toml");
    let out = dir.join("out");
    std::fs::write(&cfg, "[case]\nname = \"nonexistent\"\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_lwfr"))
        .args(["solve", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("nonexistent"));
    assert!(!out.exists());
}

#[test]
fn cli_runs_a_short_simulation() {
    let dir = temp_dir("cli-ok");
    let cfg = dir.join("fs.toml");
    let out = dir.join("out");
    std::fs::write(
        &cfg,
        "[case]\nname = \"freestream\"\n[mesh]\ncells = [4, 4]\ndegree = 4\n[output]\nformats = [\"csv\", \"vtk\"]\n",
    )
    .unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_lwfr"))
        .args(["solve", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--max-steps", "3"])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(files.iter().any(|f| f.to_string_lossy().ends_with(".csv")), "{files:?}");
    assert!(files.iter().any(|f| f.to_string_lossy().ends_with(".vtk")), "{files:?}");
}

const VORTEX: &str = "[case]\nname = \"vortex\"\n[mesh]\ncells = [4, 4]\ndegree = 3\n[time]\ncfl = 0.2\nmax_steps = 15\n";

#[test]
fn repeated_runs_are_bitwise_identical() {
    let run = || {
        let mut sim = Simulation::from_toml(VORTEX).unwrap();
        let s = sim.run().unwrap();
        (s.accepted, csv_string(&sim.mesh, &sim.eq, &sim.u, &sim.alpha))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, 15);
    assert_eq!(a, b);
}

#[test]
fn single_linear_element_output() {
    let basis = gll_basis(1).unwrap();
    let t = Transform::Cartesian { x: [0.0, 1.0], y: [0.0, 1.0] };
    let mesh = build_structured(&StructuredSpec::new(t, 1, 1), &basis).unwrap();
    let u = vec![EQ.prim2cons(&[1.0, 0.0, 0.0, 1.0]); 4];
    let vtk = vtk_string(&mesh, &EQ, &u, &[0.25]);
    assert!(vtk.contains("POINTS 4 double"));
    assert!(vtk.contains("CELLS 1 5"));
    assert!(vtk.contains("alpha"));
    let csv = csv_string(&mesh, &EQ, &u, &[0.25]);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "element,x,y,rho,rho_u,rho_v,energy,u,v,p,alpha");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() == 0.25));
}

#[test]
fn shipped_configs_build_simulations() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert!(Simulation::new(cfg).is_ok(), "{}", path.display());
        n += 1;
    }
    assert_eq!(n, 7);
}
