//! Experiment orchestration: config files, initial conditions, single runs,
//! parameter sweeps, theorem checks and plot-ready exports.
//!
//! On-disk layout of a run directory:
//!
//! ```text
//! <out>/
//!   series.csv      fixed column order, one row per output time
//!   meta.json       config echo, code version, thread count, wall time,
//!                   validity flags and the failure reason if the run aborted
//!   rho_t*.bin      optional field snapshots (16-byte header: magic "SPF1",
//!                   u32 n, f64 L, little endian; then n*n f64 row-major)
//!   check_*.json    reports written by `spawnsim check`
//!   plot/*.tsv      written by `spawnsim emit-plotdata`
//! ```

pub mod check;
pub mod config;
pub mod initial;
pub mod plotdata;
pub mod run;
pub mod sweep;

pub use check::{run_check, CheckReport, TheoremId};
pub use config::{IcConfig, OutputConfig, RunConfig, SweepConfig};
pub use run::execute_run;
pub use sweep::execute_sweep;
