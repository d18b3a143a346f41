//! Error types shared across the crate.

use thiserror::Error;

/// Everything that can go wrong when configuring, running or analysing a
/// simulation.
#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid configuration (bad grid size, nonsensical parameters, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The solution developed negativity beyond the configured tolerance.
    /// Usually means under-resolution or genuine aggregation blow-up.
    #[error("invalid state at t = {t}: min value {min_val:.3e} below floor {floor:.3e}")]
    InvalidState { t: f64, min_val: f64, floor: f64 },

    /// NaN/Inf detected; the run is aborted and flagged as a blow-up.
    #[error("blow-up indicator at t = {t}: {detail}")]
    BlowUp { t: f64, detail: String },

    /// The adaptive step shrank below the resolvable scale.
    #[error("time step collapsed at t = {t}: dt = {dt:.3e}")]
    StepCollapse { t: f64, dt: f64 },

    /// Centroid of a near-uniform field is ill-conditioned.
    #[error("delocalized state: centroid ill-conditioned (resultant {resultant:.3e})")]
    Delocalized { resultant: f64 },

    /// Argument outside the mathematical domain of a formula.
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    /// Not enough records in the requested window.
    #[error("insufficient data: need at least {needed} records in window, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// Fit window has zero variance in the abscissa.
    #[error("degenerate window: no spread in the independent variable")]
    DegenerateWindow,

    /// A theorem check was requested on a run that does not satisfy its
    /// hypotheses.
    #[error("hypothesis mismatch for {theorem}: {reason}")]
    HypothesisMismatch { theorem: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
