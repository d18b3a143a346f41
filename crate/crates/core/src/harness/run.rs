//! Execute a single run: build the initial condition, integrate, and
//! persist series.csv, meta.json and any requested field snapshots.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::harness::config::RunConfig;
use crate::harness::initial::build_initial_condition;
use crate::integrator::{self, Failure};
use crate::spectral::{GridSpec, ScalarField};

/// Snapshot file magic.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SPF1";

/// Contents of `meta.json`: a full config echo plus provenance and outcome.
/// (config, code version, thread count) determine every output byte.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: RunConfig,
    pub code_version: String,
    pub threads: usize,
    pub wall_seconds: f64,
    pub records: usize,
    pub all_records_valid: bool,
    pub failure: Option<Failure>,
    pub final_t: f64,
    pub final_m0: f64,
}

impl RunMeta {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Parse(format!("meta.json: {e}")))
    }
}

/// Write a field snapshot: 16-byte header (magic, u32 n, f64 L, little
/// endian) followed by n*n row-major f64 samples.
pub fn write_snapshot(path: &Path, field: &ScalarField) -> Result<()> {
    let grid = field.grid();
    let mut buf = Vec::with_capacity(16 + 8 * grid.n() * grid.n());
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(grid.n() as u32).to_le_bytes());
    buf.extend_from_slice(&grid.length().to_le_bytes());
    for row in field.values().rows() {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(SimError::Parse(format!(
            "{}: not a field snapshot",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let length = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let grid = GridSpec::new(n, length)?;
    if bytes.len() != 16 + 8 * n * n {
        return Err(SimError::Parse(format!(
            "{}: truncated snapshot",
            path.display()
        )));
    }
    let mut values = ndarray::Array2::zeros((n, n));
    let mut off = 16;
    for i in 0..n {
        for j in 0..n {
            values[[i, j]] = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    ScalarField::from_values(grid, values)
}

/// Outcome summary returned to callers (the full data lives on disk).
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub failure: Option<Failure>,
    pub final_m0: f64,
    pub records: usize,
}

/// Run one configuration into `out_dir` (created if needed). The config is
/// validated before anything is written, so config errors leave no partial
/// output. An aborted run still persists its partial series and the failure
/// reason in `meta.json`.
pub fn execute_run(config: &RunConfig, out_dir: &Path, base_dir: &Path) -> Result<RunReport> {
    config.validate()?;
    let grid = config.grid.to_grid()?;
    let flow = config.flow.to_model(grid, base_dir)?;
    let stepper = config.stepper_config()?;
    let rho0 = build_initial_condition(&config.ic, grid, base_dir)?;

    fs::create_dir_all(out_dir)?;
    let started = Instant::now();

    // Snapshots fire at the first output time at or after each request.
    let mut pending: Vec<f64> = config.output.snapshot_times.clone();
    pending.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pending.dedup();
    let mut snapshot_err: Option<SimError> = None;
    let outcome = integrator::integrate_with(
        rho0,
        &config.model,
        &flow,
        &stepper,
        |state, record| {
            while let Some(&next) = pending.first() {
                if record.t + 1e-12 >= next {
                    pending.remove(0);
                    let name = format!("rho_t{:.6}.bin", record.t);
                    if let Err(e) = write_snapshot(&out_dir.join(name), &state.rho) {
                        snapshot_err.get_or_insert(e);
                    }
                } else {
                    break;
                }
            }
        },
    )?;
    if let Some(e) = snapshot_err {
        return Err(e);
    }

    let series_path = out_dir.join("series.csv");
    let mut file = fs::File::create(&series_path)?;
    outcome.series.write_csv(&mut file)?;
    file.flush()?;

    let meta = RunMeta {
        config: config.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        threads: 1,
        wall_seconds: started.elapsed().as_secs_f64(),
        records: outcome.series.len(),
        all_records_valid: outcome.series.all_valid(),
        failure: outcome.failure.clone(),
        final_t: outcome.series.records.last().map_or(0.0, |r| r.t),
        final_m0: outcome.series.records.last().map_or(0.0, |r| r.m0),
    };
    fs::write(
        out_dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )?;

    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        failure: outcome.failure,
        final_m0: meta.final_m0,
        records: meta.records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let grid = GridSpec::new(16, 2.0).unwrap();
        let f = ScalarField::from_fn(grid, |x, y| x + 10.0 * y);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.bin");
        write_snapshot(&path, &f).unwrap();
        let g = read_snapshot(&path).unwrap();
        assert_eq!(f.grid(), g.grid());
        assert_eq!(f.values(), g.values());
    }
}
