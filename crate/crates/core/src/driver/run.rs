//! Simulation state and the main time loop.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::amr::{lohner_indicator, transfer_solution, AmrController};
use crate::basis::{gll_basis, BasisError};
use crate::driver::boundary::BoundarySet;
use crate::driver::config::{AmrIndicatorKind, ConfigError, OutputFormat, RunConfig, TimeMode};
use crate::driver::output::{write_csv, write_vtk};
use crate::driver::testcases::{testcase_library, TestCase, UnknownCase};
use crate::equations::{Euler, State};
use crate::lwfr::element_integral;
use crate::mesh::{build_structured_masked, transform_by_name, AdaptFlag, Face, Mesh, MeshError, StructuredSpec};
use crate::shockcapture::smoothness_alpha;
use crate::solver::{SchemeOptions, Solver, StepFailure};
use crate::timestep::{cfl_dt, effective_cfl, max_scaled_speed, PidController, TimestepError};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Case(#[from] UnknownCase),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("inadmissible initial condition in element {0}")]
    InitialInadmissible(usize),
    #[error("time step at t = {t:e}: {source}")]
    Timestep { t: f64, source: TimestepError },
    #[error("step aborted at t = {t:e}: {source}")]
    Step { t: f64, source: StepFailure },
    #[error("time step {dt:e} fell below 1e-14 * final_time at t = {t:e}")]
    Underflow { t: f64, dt: f64 },
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

/// Diagnostics of one step attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub factor: f64,
    pub accepted: bool,
    pub effective_cfl: f64,
    /// Largest relative mismatch of pure high/low-order means, if checked.
    pub mean_mismatch: Option<f64>,
}

/// Totals and counters of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub case: String,
    pub elements: usize,
    pub degree: usize,
    pub t: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// Relative drift of the global conserved totals.
    pub drift: [f64; 4],
    pub wall_time: f64,
}

impl RunSummary {
    pub const CSV_HEADER: &'static str =
        "case,elements,degree,t,accepted,rejected,drift_rho,drift_rho_u,drift_rho_v,drift_energy,wall_time_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.15e},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.3}",
            self.case,
            self.elements,
            self.degree,
            self.t,
            self.accepted,
            self.rejected,
            self.drift[0],
            self.drift[1],
            self.drift[2],
            self.drift[3],
            self.wall_time
        )
    }
}

pub struct Simulation {
    pub cfg: RunConfig,
    pub eq: Euler,
    pub case: TestCase,
    pub mesh: Mesh,
    pub u: Vec<State>,
    pub alpha: Vec<f64>,
    pub t: f64,
    pub solver: Solver,
    pub bc: BoundarySet,
    pub opts: SchemeOptions,
    pub pid: PidController,
    pub amr: Option<AmrController>,
    /// Proposed size of the next step (error mode).
    pub dt: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub history: Vec<StepRecord>,
    final_time: f64,
    initial_totals: State,
    initial_scale: State,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let eq = Euler::new(cfg.equation.gamma);
        let case = testcase_library(&cfg.case.name, eq, cfg.equation.r_gas, cfg.case.jet_centered)?;
        let basis = gll_basis(cfg.mesh.degree)?;
        let mut mesh = if let Some(path) = &cfg.mesh.file {
            let text = std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            Mesh::from_text(&text, &basis)?
        } else {
            let builder = if cfg.mesh.builder.is_empty() { case.mesh.builder } else { cfg.mesh.builder.as_str() };
            let default_builder = builder == case.mesh.builder;
            let bounds = cfg.mesh.bounds.or(if default_builder { case.mesh.bounds } else { None });
            let transform = transform_by_name(builder, bounds)?;
            let cells = cfg.mesh.cells.unwrap_or(case.mesh.cells);
            let mut spec = StructuredSpec::new(transform, cells[0], cells[1]);
            if let Some(p) = cfg.mesh.periodic.or(if default_builder { case.mesh.periodic } else { None }) {
                spec.periodic = p;
            }
            match case.mesh.mask.filter(|_| default_builder && cfg.mesh.cells.is_none()) {
                Some(mask) => build_structured_masked(&spec, &basis, &mask)?,
                None => build_structured_masked(&spec, &basis, &|_, _| true)?,
            }
        };
        for _ in 0..cfg.mesh.refine {
            let flags = vec![AdaptFlag::Refine; mesh.n_elements()];
            mesh.adapt(&flags)?;
        }
        for name in cfg.boundary.keys() {
            if mesh.tag_id(name).is_none() {
                return Err(ConfigError::Invalid(format!("boundary tag '{name}' does not exist in the mesh")).into());
            }
        }
        let kinds = mesh
            .tag_names
            .iter()
            .map(|name| {
                cfg.boundary
                    .get(name)
                    .copied()
                    .or_else(|| case.boundary_kinds.iter().find(|(n, _)| n == name).map(|(_, k)| *k))
            })
            .collect::<Vec<_>>();
        for f in &mesh.faces {
            if let Face::Boundary { tag, .. } = f {
                if kinds[*tag].is_none() {
                    return Err(ConfigError::Invalid(format!("no boundary condition for tag '{}'", mesh.tag_names[*tag])).into());
                }
            }
        }
        let bc = BoundarySet::new(eq, kinds, case.boundary_state.clone(), basis.clone());
        let opts = SchemeOptions {
            shock_capturing: cfg.limiter.shock_capturing,
            indicator: cfg.limiter.indicator.clone(),
            positivity: cfg.limiter.positivity,
            tol_abs: cfg.time.tol_e,
            tol_rel: cfg.time.tol_e,
            error_reference: cfg.time.error_reference,
            dissipation: cfg.time.dissipation,
            check_means: false,
            reject_shifted_states: cfg.time.reject_shifted_states,
        };
        let amr = cfg.amr.enabled.then(|| {
            AmrController::new(cfg.amr.base_level, cfg.amr.med_level, cfg.amr.max_level, cfg.amr.med_threshold, cfg.amr.max_threshold)
        });
        let solver = Solver::new(eq, &mesh);
        let final_time = cfg.time.final_time.unwrap_or(case.final_time);
        let pid = PidController::new(cfg.mesh.degree);
        let mut sim = Self {
            eq,
            case,
            u: Vec::new(),
            alpha: Vec::new(),
            t: 0.0,
            solver,
            bc,
            opts,
            pid,
            amr,
            dt: 0.0,
            accepted: 0,
            rejected: 0,
            history: Vec::new(),
            final_time,
            initial_totals: [0.0; 4],
            initial_scale: [0.0; 4],
            mesh,
            cfg,
        };
        sim.sample_initial()?;
        for _ in 0..sim.cfg.amr.initial_passes {
            if sim.amr.is_none() {
                break;
            }
            sim.adapt()?;
            sim.sample_initial()?;
        }
        sim.initial_totals = sim.totals();
        sim.initial_scale = sim.abs_totals();
        sim.update_alpha();
        sim.dt = match sim.cfg.time.dt_seed {
            Some(dt) => dt,
            None => cfl_dt(&sim.eq, &sim.u, &sim.mesh.geometry, sim.mesh.degree(), sim.cfg.time.dt_seed_cfl)
                .map_err(|source| RunError::Timestep { t: 0.0, source })?,
        };
        Ok(sim)
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        Self::new(RunConfig::from_toml(text)?)
    }

    fn sample_initial(&mut self) -> Result<(), RunError> {
        let np = self.mesh.basis.n_nodes().pow(2);
        let init = &self.case.initial;
        self.u = self.mesh.geometry.iter().flat_map(|g| g.coords.iter().map(|&x| init(x, 0.0))).collect();
        if let Some(bad) = self.u.iter().position(|s| !self.eq.is_admissible(s)) {
            return Err(RunError::InitialInadmissible(bad / np));
        }
        self.solver.sync(&self.mesh);
        Ok(())
    }

    pub fn np(&self) -> usize {
        self.mesh.basis.n_nodes().pow(2)
    }

    /// Global integrals of the conserved variables (fixed summation order).
    pub fn totals(&self) -> State {
        let np = self.np();
        let mut t = [0.0; 4];
        for (e, g) in self.mesh.geometry.iter().enumerate() {
            let i = element_integral(&self.u[e * np..(e + 1) * np], g, &self.mesh.basis);
            for v in 0..4 {
                t[v] += i[v];
            }
        }
        t
    }

    fn abs_totals(&self) -> State {
        let np = self.np();
        let mut t = [0.0; 4];
        for (e, g) in self.mesh.geometry.iter().enumerate() {
            let a: Vec<State> = self.u[e * np..(e + 1) * np].iter().map(|s| s.map(f64::abs)).collect();
            let i = element_integral(&a, g, &self.mesh.basis);
            for v in 0..4 {
                t[v] += i[v];
            }
        }
        t
    }

    /// `|total(t) - total(0)|` relative to the initial integral of `|u|`.
    /// Variables that start identically zero use the largest scale.
    pub fn conservation_drift(&self) -> State {
        let now = self.totals();
        let fallback = self.initial_scale.iter().fold(f64::MIN_POSITIVE, |m, x| m.max(*x));
        std::array::from_fn(|v| {
            let scale = if self.initial_scale[v] > 0.0 { self.initial_scale[v] } else { fallback };
            (now[v] - self.initial_totals[v]).abs() / scale
        })
    }

    /// Smallest nodal density and pressure.
    pub fn min_density_pressure(&self) -> (f64, f64) {
        self.u.iter().fold((f64::INFINITY, f64::INFINITY), |(r, p), s| (r.min(s[0]), p.min(self.eq.pressure(s))))
    }

    pub fn update_alpha(&mut self) {
        self.alpha = if self.opts.shock_capturing {
            self.solver.compute_alpha(&self.mesh, &self.u, &self.opts.indicator)
        } else {
            vec![0.0; self.mesh.n_elements()]
        };
    }

    /// Refinement indicator per element.
    pub fn amr_indicator(&self) -> Vec<f64> {
        let np = self.np();
        let a = &self.cfg.amr;
        let basis = &self.mesh.basis;
        (0..self.mesh.n_elements())
            .into_par_iter()
            .map(|e| {
                let ue = &self.u[e * np..(e + 1) * np];
                match a.indicator {
                    AmrIndicatorKind::Modal => smoothness_alpha(&self.eq, ue, basis, &a.modal),
                    AmrIndicatorKind::Lohner => lohner_indicator(&self.eq, ue, basis, a.variable, a.f_wave),
                }
            })
            .collect()
    }

    /// One adaptation pass with solution transfer.
    pub fn adapt(&mut self) -> Result<bool, RunError> {
        let Some(ctrl) = &self.amr else { return Ok(false) };
        let ind = self.amr_indicator();
        let flags = ctrl.flags(&ind, &self.mesh);
        self.adapt_with_flags(&flags)
    }

    /// Adapt the mesh with explicit per-element flags and transfer the
    /// solution. Returns whether the mesh changed.
    pub fn adapt_with_flags(&mut self, flags: &[AdaptFlag]) -> Result<bool, RunError> {
        if flags.iter().all(|f| *f == AdaptFlag::Keep) {
            return Ok(false);
        }
        let old_geometry = self.mesh.geometry.clone();
        let origins = self.mesh.adapt(flags)?;
        self.u = transfer_solution(&self.eq, &self.mesh, &old_geometry, &self.u, &origins);
        self.solver.sync(&self.mesh);
        self.update_alpha();
        Ok(true)
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn finished(&self) -> bool {
        self.t >= self.final_time()
    }

    /// Attempt one step; on acceptance advance the solution and run the
    /// adaptation callback.
    pub fn step(&mut self) -> Result<StepRecord, RunError> {
        let t = self.t;
        let degree = self.mesh.degree();
        let speed = max_scaled_speed(&self.eq, &self.u, &self.mesh.geometry).map_err(|source| RunError::Timestep { t, source })?;
        let remaining = self.final_time() - t;
        let mut dt = match self.cfg.time.mode {
            TimeMode::Cfl => {
                cfl_dt(&self.eq, &self.u, &self.mesh.geometry, degree, self.cfg.time.cfl).map_err(|source| RunError::Timestep { t, source })?
            }
            TimeMode::Error => self.dt,
        };
        let clamped = dt >= remaining;
        if clamped {
            dt = remaining;
        }
        let k = self.cfg.time.check_means;
        self.opts.check_means = k > 0 && (self.accepted + self.rejected) % k == 0;
        let result = self.solver.step(&self.mesh, &self.u, &self.alpha, t, dt, &self.bc, &self.opts);
        let step = self.accepted + self.rejected;
        let mut record = StepRecord {
            step,
            t,
            dt,
            factor: 1.0,
            accepted: false,
            effective_cfl: effective_cfl(dt, speed, degree),
            mean_mismatch: None,
        };
        let out = match self.cfg.time.mode {
            TimeMode::Cfl => Some(result.map_err(|source| RunError::Step { t, source })?),
            TimeMode::Error => match result {
                Ok(out) => {
                    let d = self.pid.decide(&out.error, out.inadmissible, dt);
                    record.factor = d.factor;
                    // A clamped final step does not shrink the proposal.
                    self.dt = if clamped && d.accept { self.dt.max(d.dt_next) } else { d.dt_next };
                    d.accept.then_some(out)
                }
                Err(_) => {
                    self.pid.rejected += 1;
                    record.factor = self.pid.inadmissible_factor;
                    self.dt = dt * self.pid.inadmissible_factor;
                    None
                }
            },
        };
        match out {
            Some(out) => {
                if self.opts.check_means {
                    record.mean_mismatch = Some(out.mean_mismatch);
                }
                self.u = out.u;
                self.t = if clamped { self.final_time() } else { t + dt };
                self.accepted += 1;
                record.accepted = true;
                if self.amr.is_some() && self.accepted % self.cfg.amr.interval == 0 {
                    self.adapt()?;
                }
                self.update_alpha();
            }
            None => {
                self.rejected += 1;
                if !(self.dt >= 1e-14 * self.final_time()) {
                    return Err(RunError::Underflow { t, dt: self.dt });
                }
            }
        }
        self.history.push(record);
        Ok(record)
    }

    /// Run to the final time (or `max_steps` accepted steps), calling
    /// `observer` after every attempt and writing snapshots.
    pub fn run_with(&mut self, mut observer: impl FnMut(&Simulation, &StepRecord)) -> Result<RunSummary, RunError> {
        let start = Instant::now();
        let max_steps = self.cfg.time.max_steps.unwrap_or(usize::MAX);
        let interval = self.cfg.output.interval;
        let dir = self.cfg.output.dir.clone();
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
            if interval > 0 {
                self.write_snapshot(d, 0)?;
            }
        }
        while !self.finished() && self.accepted < max_steps {
            let rec = self.step()?;
            observer(self, &rec);
            if rec.accepted && interval > 0 && self.accepted % interval == 0 {
                if let Some(d) = &dir {
                    self.write_snapshot(d, self.accepted)?;
                }
            }
        }
        if let Some(d) = &dir {
            self.write_snapshot(d, usize::MAX)?;
            self.write_history(&d.join("steps.csv"))?;
        }
        Ok(self.summary(start.elapsed().as_secs_f64()))
    }

    pub fn run(&mut self) -> Result<RunSummary, RunError> {
        self.run_with(|_, _| {})
    }

    pub fn summary(&self, wall_time: f64) -> RunSummary {
        RunSummary {
            case: self.case.name.clone(),
            elements: self.mesh.n_elements(),
            degree: self.mesh.degree(),
            t: self.t,
            accepted: self.accepted,
            rejected: self.rejected,
            drift: self.conservation_drift(),
            wall_time,
        }
    }

    /// Write the configured formats; `index == usize::MAX` marks the final
    /// state.
    pub fn write_snapshot(&self, dir: &std::path::Path, index: usize) -> Result<Vec<PathBuf>, RunError> {
        let stem = if index == usize::MAX { "final".to_string() } else { format!("snapshot_{index:06}") };
        let mut written = Vec::new();
        for f in &self.cfg.output.formats {
            let path = match f {
                OutputFormat::Vtk => dir.join(format!("{stem}.vtk")),
                OutputFormat::Csv => dir.join(format!("{stem}.csv")),
            };
            match f {
                OutputFormat::Vtk => write_vtk(&path, &self.mesh, &self.eq, &self.u, &self.alpha)?,
                OutputFormat::Csv => write_csv(&path, &self.mesh, &self.eq, &self.u, &self.alpha)?,
            }
            written.push(path);
        }
        Ok(written)
    }

    pub fn write_history(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut s = String::from("step,t,dt,factor,accepted,effective_cfl\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{:.15e},{:.15e},{:.6e},{},{:.6e}\n",
                r.step, r.t, r.dt, r.factor, r.accepted as u8, r.effective_cfl
            ));
        }
        std::fs::write(path, s)
    }

    /// L2 error of each conserved variable against the exact solution at
    /// the current time, normalized by the domain area.
    pub fn l2_errors(&self) -> Option<State> {
        let exact = self.case.exact.as_ref()?;
        Some(l2_errors(&self.mesh, &self.u, |x| exact(x, self.t)))
    }
}

/// GLL-quadrature L2 error against `exact`, normalized by the domain area.
pub fn l2_errors(mesh: &Mesh, u: &[State], exact: impl Fn(crate::mesh::Point) -> State) -> State {
    let nn = mesh.basis.n_nodes();
    let np = nn * nn;
    let w = &mesh.basis.weights;
    let mut err = [0.0; 4];
    let mut area = 0.0;
    for (e, g) in mesh.geometry.iter().enumerate() {
        for p in 0..np {
            let wj = w[p % nn] * w[p / nn] * g.jac[p];
            let ex = exact(g.coords[p]);
            for v in 0..4 {
                let d = u[e * np + p][v] - ex[v];
                err[v] += wj * d * d;
            }
            area += wj;
        }
    }
    err.map(|x| (x / area).sqrt())
}
