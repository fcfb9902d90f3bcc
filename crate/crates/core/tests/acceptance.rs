//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`; pass criterion
//! numbers as arguments to run a subset (`-- 2 5`).

use std::time::Instant;

use lwfr::amr::project_to_coarse;
use lwfr::basis::{gll_basis, legendre, mortar_operators, Matrix};
use lwfr::driver::config::{RunConfig, TimeMode};
use lwfr::driver::convergence::convergence;
use lwfr::driver::testcases::FREESTREAM;
use lwfr::driver::Simulation;
use lwfr::mesh::{build_structured, transform_by_name, AdaptFlag, Face, StructuredSpec};
use lwfr::shockcapture::subcell_normals;

/// Tolerances and thresholds of the criteria.
mod tol {
    pub const FREESTREAM_DEV: f64 = 1e-11;
    pub const FREESTREAM_SECS: f64 = 10.0;
    pub const VORTEX_RATE: f64 = 3.7;
    pub const CONV_SECS: f64 = 300.0;
    pub const COUETTE_RATE_MARGIN: f64 = 0.7;
    pub const CONSERVATION_DRIFT: f64 = 1e-11;
    pub const JET_CFL_GROWTH: f64 = 10.0;
    pub const MEAN_AGREEMENT: f64 = 1e-12;
    pub const MEAN_SAMPLES: usize = 10;
    pub const OPERATOR_TOL: f64 = 1e-12;
    pub const OPERATOR_SECS: f64 = 10.0;
    pub const DMR_FAILED_FRACTION: f64 = 0.01;
    pub const DMR_STEP_RATIO: f64 = 2.0;
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn config(text: &str) -> RunConfig {
    RunConfig::from_toml(text).expect("acceptance config parses")
}

fn max_deviation(sim: &Simulation) -> f64 {
    let u0 = sim.eq.prim2cons(&FREESTREAM);
    sim.u.iter().flat_map(|s| (0..4).map(move |v| (s[v] - u0[v]).abs())).fold(0.0, f64::max)
}

fn run_steps(sim: &mut Simulation, n: usize) -> Result<(), String> {
    for _ in 0..n {
        sim.step().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn freestream_preservation() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut worst: f64 = 0.0;
    for builder in ["warped_square", "annulus"] {
        let mut sim = Simulation::new(config(&format!(
            "[case]\nname = \"freestream\"\n[mesh]\nbuilder = \"{builder}\"\ncells = [4, 4]\ndegree = 6\n[time]\ncfl = 0.1\nfinal_time = 100.0\n"
        )))
        .unwrap();
        if let Err(e) = run_steps(&mut sim, 50) {
            return outcome(false, format!("{builder}: {e}"));
        }
        let d = max_deviation(&sim);
        worst = worst.max(d);
        details.push(format!("{builder} {d:.1e}"));
    }
    // Non-conforming phase inside one refine + coarsen cycle.
    let mut sim = Simulation::new(config(
        "[case]\nname = \"freestream\"\n[mesh]\nbuilder = \"distorted_box\"\ncells = [4, 4]\ndegree = 6\n[time]\ncfl = 0.1\nfinal_time = 100.0\n",
    ))
    .unwrap();
    let mut mortars = 0;
    let phases: [(usize, bool); 3] = [(10, true), (25, false), (15, false)];
    for (i, (steps, refine)) in phases.iter().enumerate() {
        if let Err(e) = run_steps(&mut sim, *steps) {
            return outcome(false, format!("distorted_box: {e}"));
        }
        if i == 0 && *refine {
            let flags: Vec<AdaptFlag> =
                (0..sim.mesh.n_elements()).map(|e| if e % 3 == 0 { AdaptFlag::Refine } else { AdaptFlag::Keep }).collect();
            sim.adapt_with_flags(&flags).unwrap();
            mortars = sim.mesh.faces.iter().filter(|f| matches!(f, Face::Mortar { .. })).count();
        }
        if i == 1 {
            let flags: Vec<AdaptFlag> = (0..sim.mesh.n_elements())
                .map(|e| if sim.mesh.level(e) > 0 { AdaptFlag::Coarsen } else { AdaptFlag::Keep })
                .collect();
            sim.adapt_with_flags(&flags).unwrap();
        }
    }
    let d = max_deviation(&sim);
    worst = worst.max(d);
    details.push(format!("distorted_box+amr ({mortars} mortars, {} elems after cycle) {d:.1e}", sim.mesh.n_elements()));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= tol::FREESTREAM_DEV && mortars > 0 && sim.mesh.n_elements() == 16 && secs < tol::FREESTREAM_SECS,
        format!("max deviation {worst:.2e} <= {:.0e}; {}; {secs:.1}s", tol::FREESTREAM_DEV, details.join(", ")),
    )
}

fn vortex_convergence() -> Outcome {
    let start = Instant::now();
    let cfg = config(
        "[case]\nname = \"vortex\"\n[mesh]\ncells = [8, 8]\ndegree = 3\n[limiter]\nshock_capturing = false\npositivity = false\n[time]\ncfl = 0.2\n",
    );
    let table = match convergence(&cfg, 3) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let min_rate = table.rates.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min_rate >= tol::VORTEX_RATE && secs < tol::CONV_SECS,
        format!(
            "N=3 meshes 8/16/32: rates {:.2?} (min {min_rate:.2} >= {}); rho errors {:?}; {secs:.1}s",
            table.rates,
            tol::VORTEX_RATE,
            table.errors.iter().map(|e| format!("{:.2e}", e[0])).collect::<Vec<_>>()
        ),
    )
}

fn couette_convergence() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    for degree in [2usize, 3] {
        let cfg = config(&format!(
            "[case]\nname = \"couette\"\n[mesh]\ncells = [8, 8]\ndegree = {degree}\n[limiter]\nshock_capturing = false\npositivity = false\n[time]\ncfl = 0.2\nfinal_time = 1.0\n"
        ));
        match convergence(&cfg, 3) {
            Ok(t) => {
                let min_rate = t.rates.iter().copied().fold(f64::INFINITY, f64::min);
                let need = degree as f64 + tol::COUETTE_RATE_MARGIN;
                pass &= min_rate >= need;
                details.push(format!("N={degree}: rates {:.2?} (need {need:.1})", t.rates));
            }
            Err(e) => return outcome(false, format!("N={degree}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(pass && secs < tol::CONV_SECS, format!("meshes 8/16/32: {}; {secs:.1}s", details.join("; ")))
}

fn kh_conservation() -> Outcome {
    let start = Instant::now();
    let mut sim = Simulation::new(config(
        "[case]\nname = \"kh\"\n[mesh]\ncells = [16, 16]\ndegree = 4\n[limiter.indicator]\nalpha_max = 0.002\nvariable = \"density_pressure\"\n[amr]\nenabled = true\nindicator = \"modal\"\nbase_level = 0\nmed_level = 0\nmax_level = 2\nmed_threshold = 0.0003\nmax_threshold = 0.003\ninterval = 1\n[amr.modal]\nvariable = \"density\"\n[time]\ncfl = 0.1\n",
    ))
    .unwrap();
    let mortar_count = |sim: &Simulation| sim.mesh.faces.iter().filter(|f| matches!(f, Face::Mortar { .. })).count();
    let mut max_elems = sim.mesh.n_elements();
    let mut max_mortars = 0;
    let mut worst = [0.0f64; 4];
    // The modal indicator only fires once the shear layers roll up, so the
    // 200 counted steps start at the first non-conforming mesh. Drift is
    // still measured against the totals at t = 0.
    let mut warmup = 0;
    let mut counted = 0;
    while counted < 200 {
        if let Err(e) = sim.step() {
            return outcome(false, e.to_string());
        }
        let mortars = mortar_count(&sim);
        if counted == 0 && mortars == 0 {
            warmup += 1;
            if warmup > 3000 {
                return outcome(false, "mesh never became non-conforming");
            }
        } else {
            counted += 1;
        }
        max_elems = max_elems.max(sim.mesh.n_elements());
        max_mortars = max_mortars.max(mortars);
        let d = sim.conservation_drift();
        for v in 0..4 {
            worst[v] = worst[v].max(d[v]);
        }
    }
    let m = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        m <= tol::CONSERVATION_DRIFT && max_mortars > 0,
        format!(
            "{warmup} warm-up + 200 steps with AMR every step (up to {max_elems} elements, {max_mortars} mortars): max relative drift {:?} <= {:.0e}; {:.1}s",
            worst.iter().map(|d| format!("{d:.1e}")).collect::<Vec<_>>(),
            tol::CONSERVATION_DRIFT,
            start.elapsed().as_secs_f64()
        ),
    )
}

struct JetResult {
    admissible_everywhere: bool,
    aborted: Option<String>,
    cfl: Vec<f64>,
    mismatches: Vec<f64>,
    accepted: usize,
    rejected: usize,
    secs: f64,
}

fn jet_run() -> JetResult {
    let start = Instant::now();
    let mut sim = Simulation::new(config(
        "[case]\nname = \"jet\"\n[mesh]\ncells = [64, 64]\ndegree = 4\n[time]\nmode = \"error\"\ntolE = 1e-6\nfinal_time = 1e-3\ncheck_means = 10\n",
    ))
    .unwrap();
    let mut res = JetResult {
        admissible_everywhere: true,
        aborted: None,
        cfl: Vec::new(),
        mismatches: Vec::new(),
        accepted: 0,
        rejected: 0,
        secs: 0.0,
    };
    while !sim.finished() {
        match sim.step() {
            Ok(rec) => {
                if let Some(m) = rec.mean_mismatch {
                    res.mismatches.push(m);
                }
                if rec.accepted {
                    res.cfl.push(rec.effective_cfl);
                    let (r, p) = sim.min_density_pressure();
                    res.admissible_everywhere &= r > 0.0 && p > 0.0;
                }
            }
            Err(e) => {
                res.aborted = Some(e.to_string());
                break;
            }
        }
    }
    res.accepted = sim.accepted;
    res.rejected = sim.rejected;
    res.secs = start.elapsed().as_secs_f64();
    res
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn jet_admissibility(jet: &JetResult) -> Outcome {
    if let Some(e) = &jet.aborted {
        return outcome(false, format!("aborted: {e}"));
    }
    let n = jet.cfl.len();
    if n < 40 {
        return outcome(false, format!("only {n} accepted steps"));
    }
    let early = mean(&jet.cfl[..20]);
    let late = mean(&jet.cfl[n - 20..]);
    outcome(
        jet.admissible_everywhere && late >= tol::JET_CFL_GROWTH * early,
        format!(
            "{} accepted / {} rejected, no aborts, rho,p > 0 at every accepted step: {}; effective CFL first 20 {early:.2e}, last 20 {late:.2e} (ratio {:.0} >= {}); {:.1}s",
            jet.accepted,
            jet.rejected,
            jet.admissible_everywhere,
            late / early,
            tol::JET_CFL_GROWTH,
            jet.secs
        ),
    )
}

fn jet_mean_agreement(jet: &JetResult) -> Outcome {
    let worst = jet.mismatches.iter().copied().fold(0.0, f64::max);
    outcome(
        jet.mismatches.len() >= tol::MEAN_SAMPLES && worst <= tol::MEAN_AGREEMENT,
        format!(
            "{} sampled steps: max relative mismatch of low-order and LWFR element means {worst:.2e} <= {:.0e}",
            jet.mismatches.len(),
            tol::MEAN_AGREEMENT
        ),
    )
}

fn operator_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 6];
    for n in 1..=8usize {
        let b = gll_basis(n).unwrap();
        let nn = n + 1;
        // GLL quadrature integrates x^k exactly for k <= 2N - 1.
        for k in 0..=2 * n - 1 {
            let q: f64 = b.nodes.iter().zip(&b.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            worst[0] = worst[0].max((q - exact).abs());
        }
        // Differentiation exact for degree <= N (Legendre polynomials).
        for k in 0..=n {
            for i in 0..nn {
                let d: f64 = (0..nn).map(|j| b.diff[(i, j)] * legendre(k, b.nodes[j]).0).sum();
                worst[1] = worst[1].max((d - legendre(k, b.nodes[i]).1).abs());
            }
        }
        // sum_s P_s V_s = I.
        let m = mortar_operators(&b);
        let s = m.proj[0].matmul(&m.interp[0]).add(&m.proj[1].matmul(&m.interp[1]));
        worst[2] = worst[2].max(s.max_abs_diff(&Matrix::identity(nn)));
        // Mortar flux conservation for v = 1: coarse integral equals the
        // sum of fine integrals.
        let fine: [Vec<[f64; 4]>; 2] = std::array::from_fn(|s| {
            (0..nn).map(|q| std::array::from_fn(|v| ((q * 7 + v * 3 + s * 5) as f64 * 0.37).sin())).collect()
        });
        let coarse = project_to_coarse(&m, [&fine[0], &fine[1]]);
        for v in 0..4 {
            let ci: f64 = (0..nn).map(|p| b.weights[p] * coarse[p][v]).sum();
            let fi: f64 = (0..2).map(|s| (0..nn).map(|q| b.weights[q] * fine[s][q][v]).sum::<f64>()).sum();
            worst[3] = worst[3].max((ci + fi).abs());
        }
    }
    // Metric identities and subcell telescoping on every builder mesh.
    for name in ["cartesian", "warped_square", "annulus", "distorted_box"] {
        for n in [3usize, 4, 6] {
            let b = gll_basis(n).unwrap();
            let mesh = build_structured(&StructuredSpec::new(transform_by_name(name, None).unwrap(), 6, 5), &b).unwrap();
            let scale = mesh
                .geometry
                .iter()
                .flat_map(|g| g.ja.iter().flat_map(|d| d.iter().map(|v| v[0].abs().max(v[1].abs()))))
                .fold(0.0, f64::max);
            worst[4] = worst[4].max(mesh.max_metric_residual() / scale);
            let nn = n + 1;
            for g in &mesh.geometry {
                let sub = subcell_normals(g, &b);
                for dir in 0..2 {
                    for line in 0..nn {
                        let last = if dir == 0 { n + nn * line } else { line + nn * n };
                        let r = sub.normal_right[dir][last];
                        let ja = g.ja[dir][last];
                        worst[5] = worst[5].max(((r[0] - ja[0]).abs() + (r[1] - ja[1]).abs()) / scale);
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let m = worst.iter().copied().fold(0.0, f64::max);
    outcome(
        m <= tol::OPERATOR_TOL && secs < tol::OPERATOR_SECS,
        format!(
            "quadrature {:.1e}, D exactness {:.1e}, sum P V - I {:.1e}, mortar flux {:.1e}, metric identity {:.1e}, subcell telescoping {:.1e} (all <= {:.0e}); {secs:.2}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            worst[5],
            tol::OPERATOR_TOL
        ),
    )
}

fn dmr_config(mode: TimeMode, cfl: f64) -> RunConfig {
    let mode = match mode {
        TimeMode::Cfl => "cfl",
        TimeMode::Error => "error",
    };
    config(&format!(
        "[case]\nname = \"dmr\"\n[mesh]\ncells = [16, 5]\ndegree = 4\n[time]\nmode = \"{mode}\"\ncfl = {cfl}\ntolE = 1e-6\nfinal_time = 0.2\n"
    ))
}

fn dmr_time_stepping() -> Outcome {
    let start = Instant::now();
    let mut best: Option<(f64, usize)> = None;
    let mut tried = Vec::new();
    for cfl in [0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1] {
        let mut sim = Simulation::new(dmr_config(TimeMode::Cfl, cfl)).unwrap();
        match sim.run() {
            Ok(s) => {
                tried.push(format!("C={cfl}: {} steps", s.accepted));
                best = Some((cfl, s.accepted));
                break;
            }
            Err(_) => tried.push(format!("C={cfl}: abort")),
        }
    }
    let Some((best_cfl, best_steps)) = best else {
        return outcome(false, format!("no CFL run completed ({})", tried.join(", ")));
    };
    let mut sim = Simulation::new(dmr_config(TimeMode::Error, 0.1)).unwrap();
    let s = match sim.run() {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("error-based run aborted: {e}")),
    };
    let total = s.accepted + s.rejected;
    let failed = s.rejected as f64 / total as f64;
    let ratio = total as f64 / best_steps as f64;
    outcome(
        failed <= tol::DMR_FAILED_FRACTION && ratio <= tol::DMR_STEP_RATIO,
        format!(
            "error-based: {} accepted, {} failed ({:.2}% <= 1%); best CFL run C={best_cfl} with {best_steps} steps; step ratio {ratio:.2} <= {}; tried {}; {:.1}s",
            s.accepted,
            s.rejected,
            100.0 * failed,
            tol::DMR_STEP_RATIO,
            tried.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: usize| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |k: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {k} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, name, o));
    };
    if want(1) {
        report(1, "free-stream preservation", freestream_preservation());
    }
    if want(2) {
        report(2, "isentropic vortex convergence", vortex_convergence());
    }
    if want(3) {
        report(3, "Couette convergence", couette_convergence());
    }
    if want(4) {
        report(4, "conservation with AMR", kh_conservation());
    }
    if want(5) || want(6) {
        let jet = jet_run();
        if want(5) {
            report(5, "admissibility stress", jet_admissibility(&jet));
        }
        if want(6) {
            report(6, "element means of low-order and LWFR updates", jet_mean_agreement(&jet));
        }
    }
    if want(7) {
        report(7, "operator suite", operator_suite());
    }
    if want(8) {
        report(8, "time-stepping comparison", dmr_time_stepping());
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
