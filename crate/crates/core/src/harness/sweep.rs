//! Parameter sweeps: expand the cartesian axes, run each configuration in
//! its own subdirectory (optionally in parallel), and distill summary.csv.
//!
//! summary.csv is a pure function of the per-run outputs: it is produced by
//! rescanning the subdirectories, so it can always be regenerated.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::diagnostics::TimeSeries;
use crate::error::{Result, SimError};
use crate::harness::config::SweepConfig;
use crate::harness::run::{execute_run, RunMeta};
use crate::theory;

pub const SUMMARY_HEADER: &str =
    "label,epsilon,chi,final_m0,half_mass_time,half_mass_method,fit_slope,fit_r2,completed,all_valid";

/// One summary.csv row.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub label: String,
    pub epsilon: f64,
    pub chi: f64,
    pub final_m0: f64,
    pub half_mass_time: f64,
    pub half_mass_method: HalfMassMethod,
    pub fit_slope: f64,
    pub fit_r2: f64,
    pub completed: bool,
    pub all_valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfMassMethod {
    /// m0 crossed half its initial value inside the run.
    Measured,
    /// Extrapolated from the inverse-log fit over the late window.
    Extrapolated,
    /// Neither reached nor extrapolatable.
    Unreached,
}

impl HalfMassMethod {
    fn as_str(self) -> &'static str {
        match self {
            HalfMassMethod::Measured => "measured",
            HalfMassMethod::Extrapolated => "extrapolated",
            HalfMassMethod::Unreached => "unreached",
        }
    }
}

/// Half-mass time of a series; falls back to extrapolating the fitted
/// inverse-log law `1/m0 = A + B log t` when the run does not reach it.
pub fn half_mass_time(series: &TimeSeries) -> (f64, HalfMassMethod) {
    if let Some(t) = series.mass_fraction_time(0.5) {
        return (t, HalfMassMethod::Measured);
    }
    let Some(first) = series.records.first() else {
        return (f64::NAN, HalfMassMethod::Unreached);
    };
    let Some(last) = series.records.last() else {
        return (f64::NAN, HalfMassMethod::Unreached);
    };
    let window = (last.t / 10.0, last.t);
    match theory::fit_inverse_log(series, window) {
        Ok(fit) if fit.slope > 0.0 => {
            let target = 2.0 / first.m0; // 1/(0.5 m0(0))
            let ln_t = (target - fit.intercept) / fit.slope;
            (ln_t.exp(), HalfMassMethod::Extrapolated)
        }
        _ => (f64::INFINITY, HalfMassMethod::Unreached),
    }
}

fn summarize_run_dir(dir: &Path) -> Result<SummaryRow> {
    let meta = RunMeta::load(&dir.join("meta.json"))?;
    let series = load_series(&dir.join("series.csv"))?;
    let (t_half, method) = half_mass_time(&series);
    let t_end = series.records.last().map_or(0.0, |r| r.t);
    let fit = theory::fit_inverse_log(&series, (t_end / 10.0, t_end)).ok();
    Ok(SummaryRow {
        label: meta.config.label.clone(),
        epsilon: meta.config.model.epsilon,
        chi: meta.config.model.chi,
        final_m0: meta.final_m0,
        half_mass_time: t_half,
        half_mass_method: method,
        fit_slope: fit.map_or(f64::NAN, |f| f.slope),
        fit_r2: fit.map_or(f64::NAN, |f| f.r_squared),
        completed: meta.failure.is_none(),
        all_valid: meta.all_records_valid,
    })
}

/// Rescan a sweep directory and rebuild the summary rows (sorted by label).
pub fn summarize_dir(sweep_dir: &Path) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(sweep_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("series.csv").exists())
        .collect();
    entries.sort();
    for dir in entries {
        rows.push(summarize_run_dir(&dir)?);
    }
    Ok(rows)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{},{}\n",
            r.label,
            r.epsilon,
            r.chi,
            r.final_m0,
            r.half_mass_time,
            r.half_mass_method.as_str(),
            r.fit_slope,
            r.fit_r2,
            r.completed as u8,
            r.all_valid as u8,
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Run every expanded configuration under `out_dir/<label>/`, then write
/// `summary.csv`. Runs execute in batches of `parallelism` (overridable);
/// per-run failures are recorded and the sweep continues.
pub fn execute_sweep(
    sweep: &SweepConfig,
    out_dir: &Path,
    base_dir: &Path,
    parallelism_override: Option<usize>,
) -> Result<Vec<SummaryRow>> {
    sweep.validate()?;
    let runs = sweep.expand();
    fs::create_dir_all(out_dir)?;
    let parallelism = parallelism_override.unwrap_or(sweep.parallelism).max(1);

    let errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    for batch in runs.chunks(parallelism) {
        std::thread::scope(|scope| {
            for run in batch {
                let errors = &errors;
                scope.spawn(move || {
                    let dir = out_dir.join(&run.label);
                    match execute_run(run, &dir, base_dir) {
                        Ok(report) => {
                            if let Some(failure) = report.failure {
                                eprintln!("[sweep] {}: {}", run.label, failure.describe());
                            }
                        }
                        Err(e) => {
                            // hard error: no outputs for this run; log and go on
                            errors.lock().unwrap().push(format!("{}: {e}", run.label));
                        }
                    }
                });
            }
        });
    }
    for line in errors.into_inner().unwrap() {
        eprintln!("[sweep] run failed outright: {line}");
    }

    let rows = summarize_dir(out_dir)?;
    write_summary_csv(&rows, &out_dir.join("summary.csv"))?;
    Ok(rows)
}

/// Load a series from disk.
pub fn load_series(path: &Path) -> Result<TimeSeries> {
    let file = fs::File::open(path).map_err(SimError::Io)?;
    TimeSeries::read_csv(std::io::BufReader::new(file))
}
