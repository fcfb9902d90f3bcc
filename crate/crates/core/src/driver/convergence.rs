//! Grid convergence studies against exact solutions.

use crate::driver::config::RunConfig;
use crate::driver::run::{RunError, Simulation};
use crate::equations::State;

/// Errors per mesh and the fitted rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub cells: Vec<[usize; 2]>,
    pub errors: Vec<State>,
    /// Least-squares slope of `log(error)` against `log(1/cells)`.
    pub rates: [f64; 4],
}

impl RateTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cells_x,cells_y,err_rho,err_rho_u,err_rho_v,err_energy\n");
        for (c, e) in self.cells.iter().zip(&self.errors) {
            s.push_str(&format!("{},{},{:.6e},{:.6e},{:.6e},{:.6e}\n", c[0], c[1], e[0], e[1], e[2], e[3]));
        }
        s.push_str(&format!(
            "rate,,{:.3},{:.3},{:.3},{:.3}\n",
            self.rates[0], self.rates[1], self.rates[2], self.rates[3]
        ));
        s
    }
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Rates from errors on meshes with `cells` elements per direction.
pub fn fit_rates(cells: &[usize], errors: &[State]) -> [f64; 4] {
    let x: Vec<f64> = cells.iter().map(|&c| (1.0 / c as f64).ln()).collect();
    std::array::from_fn(|v| {
        let y: Vec<f64> = errors.iter().map(|e| e[v].ln()).collect();
        least_squares_slope(&x, &y)
    })
}

/// Run `cfg` on `levels` successively doubled meshes.
pub fn convergence(cfg: &RunConfig, levels: usize) -> Result<RateTable, RunError> {
    let base = {
        let probe = Simulation::new(RunConfig { output: Default::default(), ..cfg.clone() })?;
        if probe.case.exact.is_none() {
            return Err(crate::driver::config::ConfigError::Invalid(format!(
                "case '{}' has no exact solution",
                probe.case.name
            ))
            .into());
        }
        cfg.mesh.cells.unwrap_or(probe.case.mesh.cells)
    };
    let mut cells = Vec::new();
    let mut errors = Vec::new();
    for l in 0..levels {
        let c = [base[0] << l, base[1] << l];
        let mut run_cfg = cfg.clone();
        run_cfg.mesh.cells = Some(c);
        run_cfg.output = Default::default();
        let mut sim = Simulation::new(run_cfg)?;
        sim.run()?;
        errors.push(sim.l2_errors().expect("exact solution checked above"));
        cells.push(c);
    }
    let cx: Vec<usize> = cells.iter().map(|c| c[0]).collect();
    let rates = fit_rates(&cx, &errors);
    Ok(RateTable { cells, errors, rates })
}
