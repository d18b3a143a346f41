//! Command-line front end: run single simulations, sweep parameters, fit
//! stored series against the decay models, check theorem envelopes, and
//! export plot-ready data.
//!
//! Exit codes: 0 success, 2 configuration error, 3 blow-up/negativity abort,
//! 4 time-step collapse, 1 anything else (including a failed check).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spawnsim::harness::check::{CheckRequest, TheoremId};
use spawnsim::harness::sweep::load_series;
use spawnsim::harness::{self, config::RunConfig, config::SweepConfig};
use spawnsim::integrator::Failure;
use spawnsim::theory::{self, FitModel};
use spawnsim::SimError;

#[derive(Parser)]
#[command(
    name = "spawnsim",
    about = "Pseudo-spectral chemotaxis-reaction-advection simulator and mass-decay analysis harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModelArg {
    InverseLog,
    PowerLaw,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation into an output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recorded in meta.json; single runs always execute on one thread.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Expand a sweep config and run every member.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Max concurrent runs (overrides the config).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Least-squares fit of a stored series.
    Fit {
        /// Path to series.csv.
        #[arg(long)]
        series: PathBuf,
        #[arg(long, value_enum)]
        model: FitModelArg,
        /// Fit window as LO:HI.
        #[arg(long)]
        window: String,
        /// Report path (default: print to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a stored run against a theorem envelope.
    Check {
        /// Path to series.csv (meta.json must sit next to it).
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        theorem: String,
        #[arg(long, default_value_t = 0.05)]
        slack: f64,
        /// Assertion window LO:HI (calibration defaults to [LO/10, LO]).
        #[arg(long)]
        window: Option<String>,
        /// Report path (default: check_<theorem>.json next to the series).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot-ready TSV files for a run or sweep directory.
    EmitPlotdata {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_window(s: &str) -> Result<(f64, f64), SimError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 2 {
        return Err(SimError::Config(format!(
            "window must be LO:HI, got {s:?}"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|e| SimError::Config(format!("bad window: {e}")))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|e| SimError::Config(format!("bad window: {e}")))?;
    if !(lo < hi) {
        return Err(SimError::Config("window needs LO < HI".into()));
    }
    Ok((lo, hi))
}

fn error_code(e: &SimError) -> u8 {
    match e {
        SimError::Config(_)
        | SimError::Parse(_)
        | SimError::HypothesisMismatch { .. }
        | SimError::Domain { .. } => 2,
        SimError::InvalidState { .. } | SimError::BlowUp { .. } => 3,
        SimError::StepCollapse { .. } => 4,
        _ => 1,
    }
}

fn failure_code(f: &Failure) -> u8 {
    match f {
        Failure::Negativity { .. } | Failure::BlowUp { .. } => 3,
        Failure::StepCollapse { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, SimError> {
    match cli.command {
        Command::Run {
            config,
            out,
            threads: _,
        } => {
            let base_dir = config
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| PathBuf::from("."));
            let run_config = RunConfig::load(&config)?;
            let report = harness::execute_run(&run_config, &out, &base_dir)?;
            match &report.failure {
                None => {
                    println!(
                        "run {} complete: {} records, final m0 = {:.6e}",
                        run_config.label, report.records, report.final_m0
                    );
                    Ok(0)
                }
                Some(failure) => {
                    eprintln!("run {} aborted: {}", run_config.label, failure.describe());
                    Ok(failure_code(failure))
                }
            }
        }
        Command::Sweep {
            config,
            out,
            threads,
        } => {
            let base_dir = config
                .parent()
                .map(|p| p.to_path_buf())
                .unwrap_or_else(|| PathBuf::from("."));
            let sweep = SweepConfig::load(&config)?;
            let rows = harness::execute_sweep(&sweep, &out, &base_dir, threads)?;
            println!(
                "sweep complete: {} runs, summary at {}",
                rows.len(),
                out.join("summary.csv").display()
            );
            Ok(0)
        }
        Command::Fit {
            series,
            model,
            window,
            out,
        } => {
            let window = parse_window(&window)?;
            let data = load_series(&series)?;
            let fit = match model {
                FitModelArg::InverseLog => theory::fit_inverse_log(&data, window)?,
                FitModelArg::PowerLaw => theory::fit_power_law(&data, window)?,
            };
            let json = serde_json::to_string_pretty(&fit).expect("fit serializes");
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            let name = match fit.model {
                FitModel::InverseLog => "1/m0 ~ A + B log t",
                FitModel::PowerLaw => "log m0 ~ A + B log t",
            };
            eprintln!(
                "fit {name}: slope = {:.6e}, r^2 = {:.6}",
                fit.slope, fit.r_squared
            );
            Ok(0)
        }
        Command::Check {
            series,
            theorem,
            slack,
            window,
            out,
        } => {
            let theorem: TheoremId = theorem.parse()?;
            let window = window.as_deref().map(parse_window).transpose()?;
            let request = CheckRequest {
                theorem,
                slack,
                window,
                ..Default::default()
            };
            let report = harness::run_check(&series, &request)?;
            let out_path = out.unwrap_or_else(|| {
                series
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join(format!("check_{}.json", theorem.as_str()))
            });
            harness::check::write_report(&report, &out_path)?;
            println!(
                "check {}: {} (max violation {:.4e}, slack {:.2e}) -> {}",
                theorem.as_str(),
                if report.pass { "PASS" } else { "FAIL" },
                report.max_violation,
                report.slack,
                out_path.display()
            );
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::EmitPlotdata { dir } => {
            let written = if dir.join("series.csv").exists() {
                harness::plotdata::emit_run(&dir)?
            } else {
                harness::plotdata::emit_sweep(&dir)?
            };
            for name in &written {
                println!("wrote {}", dir.join(name).display());
            }
            Ok(0)
        }
    }
}
