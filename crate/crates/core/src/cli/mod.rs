//! Command-line front end. Exit status 0 means every reported check
//! passed, 1 a residual or consistency failure, 2 a usage or input error.

mod commands;
pub mod model_file;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use commands::{el_lines, Outcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Parser)]
#[command(
    name = "ksymp",
    version,
    about = "Classical first-order field theories on k-symplectic phase spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Sampling {
    /// Number of seeded random sample points.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct Start {
    /// Initial field values, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    q: Option<String>,
    /// Initial velocities v1_1, v1_2, .., comma separated.
    #[arg(long, allow_hyphen_values = true)]
    v: Option<String>,
    /// Parameter grid, e.g. t1=0:1:0.01,t2=0:1:0.01.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the field equations, Legendre map, energy, Hessian and forms.
    Derive { model: PathBuf },
    /// Regularity, two-form pullback and field-operator checks at random points.
    Check {
        model: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Integrate the SOPDE solution from an initial point over a grid.
    Integrate {
        model: PathBuf,
        #[command(flatten)]
        start: Start,
        /// RK4 substeps per grid step.
        #[arg(long, default_value_t = 1)]
        substeps: usize,
        /// Directory for section.csv and section.json; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Equivalence report on regular models, constrained report otherwise.
    Verify {
        model: PathBuf,
        #[command(flatten)]
        start: Start,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Constraint algorithm on the graph of the Legendre map.
    Constraints {
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("KSYMP_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().ok().filter(|t| *t > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "KSYMP_THREADS must be a positive integer, found {value:?}"
        ))
    })?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Derive { model } => commands::derive(&model),
        Command::Check { model, sampling } => {
            commands::check(&model, sampling.samples, sampling.seed, sampling.tol)
        }
        Command::Integrate {
            model,
            start,
            substeps,
            out,
            format,
        } => commands::integrate(
            &model,
            &commands::IntegrateArgs {
                q: start.q.as_deref(),
                v: start.v.as_deref(),
                grid: start.grid.as_deref(),
                substeps,
                out: out.as_deref(),
                format,
            },
        ),
        Command::Verify {
            model,
            start,
            sampling,
        } => commands::verify(
            &model,
            &commands::VerifyArgs {
                q: start.q.as_deref(),
                v: start.v.as_deref(),
                grid: start.grid.as_deref(),
                samples: sampling.samples,
                seed: sampling.seed,
                tol: sampling.tol,
            },
        ),
        Command::Constraints {
            model,
            samples,
            seed,
            tol,
        } => commands::constraints(&model, samples, seed, tol),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
                return 0;
            }
            let _ = stderr.write_all(text.as_bytes());
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(outcome) => {
            if stdout.write_all(outcome.stdout.as_bytes()).is_err() {
                return 2;
            }
            outcome.code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}
