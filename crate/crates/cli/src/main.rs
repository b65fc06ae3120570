use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod report;

#[derive(Parser)]
#[command(
    name = "varcalc",
    version,
    about = "Abnormality, extremals and multipliers of constrained variational problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Admissibility residual, control rank and corner jumps of the curve.
    Check(Common),
    /// Abnormality index of the curve, optionally with a local scan.
    Abnormality(Common),
    /// Shoot for an extremal with the `[solve]` data.
    Solve(Common),
    /// Residuals of a candidate CSV against the problem.
    Verify(Common),
    /// Lagrange multipliers of the `[extrinsic]` formulation.
    Multipliers(Common),
    /// Gauge-transform a candidate and re-check its residuals.
    GaugeTest(GaugeArgs),
}

#[derive(Args, Clone)]
pub struct Common {
    /// Problem file (TOML).
    pub file: Option<PathBuf>,
    /// Built-in corpus problem instead of a file.
    #[arg(long, conflicts_with = "file")]
    pub builtin: Option<String>,
    /// Write the machine-readable report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write the candidate CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Read an existing candidate CSV instead of solving.
    #[arg(long)]
    pub candidate: Option<PathBuf>,
    /// Also scan subintervals for local normality.
    #[arg(long)]
    pub scan_local: bool,
    /// Override the tolerance the command decides with.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Clone)]
pub struct GaugeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Gauge function f(t, q).
    #[arg(long = "f", default_value = "t")]
    pub f: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check(c) => commands::check(&c),
        Command::Abnormality(c) => commands::abnormality(&c),
        Command::Solve(c) => commands::solve(&c),
        Command::Verify(c) => commands::verify(&c),
        Command::Multipliers(c) => commands::multipliers(&c),
        Command::GaugeTest(g) => commands::gauge_test(&g.common, &g.f),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code.into()
        }
    }
}
