use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use lwfr::driver::convergence::convergence;
use lwfr::driver::{RunConfig, RunSummary, Simulation};

/// Thread count override for the element loops.
const THREADS_ENV: &str = "LWFR_NUM_THREADS";

#[derive(Parser)]
#[command(name = "lwfr", version, about = "Lax-Wendroff flux reconstruction solver for the 2-D Euler equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation.
    Solve {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this many accepted steps.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Append a one-line run summary to this CSV file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Grid convergence study on successively doubled meshes.
    Convergence {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV} must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn append_summary(path: &PathBuf, s: &RunSummary) -> anyhow::Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{}", RunSummary::CSV_HEADER)?;
    }
    writeln!(f, "{}", s.csv_row())?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Solve { config, out, max_steps, summary } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if out.is_some() {
                cfg.output.dir = out;
            }
            if max_steps.is_some() {
                cfg.time.max_steps = max_steps;
            }
            let mut sim = Simulation::new(cfg)?;
            let s = sim.run()?;
            println!("{}", RunSummary::CSV_HEADER);
            println!("{}", s.csv_row());
            if let Some(path) = summary {
                append_summary(&path, &s)?;
            }
        }
        Command::Convergence { config, levels } => {
            let cfg = RunConfig::from_file(&config)?;
            let table = convergence(&cfg, levels)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
