//! Command-line front end: tensor validation, curvature norms, the
//! identity-map coefficient, and batch scaling experiments.
//!
//! Exit codes: 0 on success, 1 on validation failure or bad input,
//! 2 when a scaling run contains unconverged rows (the report is still
//! written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use curvlab::curvature::RiemannTensor;
use curvlab::geometry::expmap_energy_coefficient;
use curvlab::norm::{minimize_misfit, VALIDATION_TOL};
use curvlab::scaling::{
    report_exponent, run_ball_scaling, run_rod_scaling, ExperimentConfig, ScalingReport,
};
use curvlab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "curvlab",
    version,
    about = "Curvature norms and elastic energy scaling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Write the primary JSON result to PATH instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Write a CSV mirror of scaling reports next to the JSON output.
    #[arg(long, global = true)]
    csv: bool,

    /// Seed recorded in reports (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the curvature symmetries of a tensor file.
    Validate {
        tensor: PathBuf,
        /// Relative symmetry tolerance.
        #[arg(long, default_value_t = VALIDATION_TOL)]
        tol: f64,
    },
    /// Compute the curvature norm of a tensor file.
    Norm {
        tensor: PathBuf,
        /// Polynomial degree of the minimization basis.
        #[arg(long, default_value_t = curvlab::norm::DEFAULT_DEGREE)]
        degree: u32,
    },
    /// Identity-map energy coefficient of a tensor file.
    Expmap { tensor: PathBuf },
    /// Run the ball scaling experiment described by a config file.
    BallScaling { config: PathBuf },
    /// Run the rod (tube) scaling experiment described by a config file.
    RodScaling { config: PathBuf },
    /// Refit the scaling exponent of an existing report file.
    Fit { report: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Validate { tensor, tol } => {
            let t: RiemannTensor = read_json(tensor)?;
            let valid = t.validate_symmetries(*tol)?;
            let result = serde_json::json!({
                "dim": t.dim(),
                "valid": valid,
                "max_violation": t.max_symmetry_violation(),
                "tolerance": tol,
            });
            emit(cli.out.as_deref(), &result)?;
            Ok(if valid {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Norm { tensor, degree } => {
            let t: RiemannTensor = read_json(tensor)?;
            reject_invalid(&t)?;
            let solution = minimize_misfit(&t, *degree)?;
            emit(cli.out.as_deref(), &serde_json::to_value(&solution)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Expmap { tensor } => {
            let t: RiemannTensor = read_json(tensor)?;
            reject_invalid(&t)?;
            let result = serde_json::json!({
                "dim": t.dim(),
                "coefficient": expmap_energy_coefficient(&t),
            });
            emit(cli.out.as_deref(), &result)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::BallScaling { config } => run_scaling(&cli, config, run_ball_scaling),
        Command::RodScaling { config } => run_scaling(&cli, config, run_rod_scaling),
        Command::Fit { report } => {
            let report: ScalingReport = read_json(report)?;
            let refit = report_exponent(&report.rows);
            let usable = report
                .rows
                .iter()
                .filter(|r| r.inf_energy > curvlab::scaling::ZERO_ENERGY_FLOOR)
                .count();
            let result = serde_json::json!({
                "fitted_exponent": refit,
                "usable_rows": usable,
                "reported_exponent": report.fitted_exponent,
            });
            emit(cli.out.as_deref(), &result)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn reject_invalid(t: &RiemannTensor) -> Result<()> {
    if !t.validate_symmetries(VALIDATION_TOL)? {
        return Err(Error::InvalidConfig(format!(
            "tensor violates curvature symmetries (max violation {:.3e})",
            t.max_symmetry_violation()
        )));
    }
    Ok(())
}

fn run_scaling(
    cli: &Cli,
    config_path: &Path,
    runner: fn(&ExperimentConfig) -> Result<ScalingReport>,
) -> Result<ExitCode> {
    let mut cfg: ExperimentConfig = read_json(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let report = runner(&cfg)?;
    if !cli.quiet {
        for row in &report.rows {
            eprintln!(
                "h = {:<8} energy = {:.6e}  energy/h^4 = {:.6e}  {}",
                row.h,
                row.inf_energy,
                row.inf_energy_over_h4,
                if row.converged {
                    "converged"
                } else {
                    "UNCONVERGED"
                }
            );
        }
        if let Some(beta) = report.fitted_exponent {
            eprintln!("fitted exponent = {beta:.4}");
        }
    }

    let destination = cli.out.clone().or_else(|| report.config.output.clone());
    let json = report.canonical_json()?;
    match &destination {
        Some(path) => std::fs::write(path, json.as_bytes())?,
        None => println!("{json}"),
    }
    if cli.csv {
        let path = destination.as_deref().ok_or_else(|| {
            Error::InvalidConfig("--csv requires an output path (--out or config.output)".into())
        })?;
        std::fs::write(path.with_extension("csv"), report.to_csv().as_bytes())?;
    }

    Ok(if report.has_unconverged_rows() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes canonical JSON (sorted keys) to the given path or stdout.
fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text.as_bytes())?,
        None => println!("{text}"),
    }
    Ok(())
}
