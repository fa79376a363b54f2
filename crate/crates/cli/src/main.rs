//! Command-line workbench: offline builds, online suites and dense-oracle checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tarom::workbench::{
    load_artifacts, load_spec, make_family, oracle_suite, run_methods, run_offline, run_suite,
    write_csv, BenchmarkSpec, Method, RunSummary,
};

#[derive(Parser)]
#[command(
    name = "tarom",
    version,
    about = "Parametric transport solvers with trajectory-aware ROM preconditioners"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for artifacts and CSV files; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Training solves and offline ROM construction.
    Offline { config: PathBuf },
    /// Runs the configured methods at one parameter.
    Solve {
        config: PathBuf,
        /// Comma-separated parameter components.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Vec<f64>,
        /// Overrides the configured method list.
        #[arg(long)]
        method: Vec<String>,
    },
    /// Offline stage (unless artifacts exist) followed by the seeded test suite.
    Bench {
        config: PathBuf,
        /// Rebuild artifacts even if they exist.
        #[arg(long)]
        rebuild: bool,
    },
    /// Compares the matrix-free solvers with dense solves.
    Oracle {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Vec<f64>,
    },
}

fn out_dir(cli_out: &Option<PathBuf>, spec: &BenchmarkSpec) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("tarom-out"))
}

fn print_summary(s: &RunSummary) {
    println!(
        "{} on {} test parameters",
        s.problem,
        s.test_parameters.len()
    );
    println!(
        "{:<18} {:>9} {:>10} {:>10} {:>12}",
        "method", "converged", "mean_iter", "mean_sweep", "mean_res_inf"
    );
    for m in &s.methods {
        let ok = m.runs.iter().filter(|r| r.converged).count();
        println!(
            "{:<18} {:>9} {:>10.2} {:>10.2} {:>12.3e}",
            m.method.to_string(),
            format!("{ok}/{}", m.runs.len()),
            m.mean_iterations,
            m.mean_sweeps,
            m.mean_residual_inf
        );
    }
}

fn artifacts_present(spec: &BenchmarkSpec, dir: &Path) -> bool {
    spec.artifact_keys()
        .iter()
        .all(|k| dir.join("artifacts").join(format!("{k}.tarrom")).exists())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Offline { config } => {
            let spec =
                load_spec(&config).with_context(|| format!("reading {}", config.display()))?;
            let dir = out_dir(&cli.out, &spec);
            let off = run_offline(&spec, Some(&dir))?;
            for t in &off.timings {
                println!(
                    "{:<22} {:>9.2}s  x{:<7.3} ranks [{}]",
                    t.stage, t.seconds, t.relative_to_training, t.ranks
                );
            }
            if !off.unconverged_training.is_empty() {
                eprintln!(
                    "warning: {} training solves missed the training tolerance",
                    off.unconverged_training.len()
                );
            }
            println!("artifacts written to {}", dir.join("artifacts").display());
            Ok(true)
        }
        Command::Solve { config, mu, method } => {
            let mut spec =
                load_spec(&config).with_context(|| format!("reading {}", config.display()))?;
            if !method.is_empty() {
                spec.methods = method
                    .iter()
                    .map(|m| m.parse::<Method>())
                    .collect::<Result<_, _>>()?;
            }
            let dir = out_dir(&cli.out, &spec);
            let artifacts = load_artifacts(&spec, &dir)?;
            let family = make_family(spec.problem, &spec.discretization)?;
            let s = run_methods(&spec, &family, &[mu], &artifacts)?;
            for m in &s.methods {
                let r = &m.runs[0];
                println!(
                    "{:<18} converged={} iterations={} sweeps={} residual_inf={:.3e}",
                    m.method.to_string(),
                    r.converged,
                    r.iterations,
                    r.sweeps,
                    r.residual_inf
                );
            }
            write_csv(&s, &dir)?;
            Ok(s.all_converged())
        }
        Command::Bench { config, rebuild } => {
            let spec =
                load_spec(&config).with_context(|| format!("reading {}", config.display()))?;
            let dir = out_dir(&cli.out, &spec);
            let artifacts = if rebuild || !artifacts_present(&spec, &dir) {
                run_offline(&spec, Some(&dir))?.artifacts
            } else {
                load_artifacts(&spec, &dir)?
            };
            let s = run_suite(&spec, &artifacts, Some(&dir))?;
            print_summary(&s);
            Ok(s.all_converged())
        }
        Command::Oracle { config, mu } => {
            let spec =
                load_spec(&config).with_context(|| format!("reading {}", config.display()))?;
            let mu = if mu.is_empty() {
                let b = spec.problem.parameter_box();
                b.lower
                    .iter()
                    .zip(&b.upper)
                    .map(|(l, u)| 0.5 * (l + u))
                    .collect()
            } else {
                mu
            };
            let checks = oracle_suite(&spec, &mu)?;
            for c in &checks {
                println!(
                    "[{}] {:<28} {:.3e} (limit {:.1e})",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            if checks.is_empty() {
                bail!("no oracle checks ran");
            }
            Ok(checks.iter().all(|c| c.passed()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs did not converge");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
