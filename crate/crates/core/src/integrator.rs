//! Time integration: integrating-factor schemes that apply the diffusion
//! semigroup exactly in spectral space (multiplication by `exp(-|k|^2 dt)`)
//! and treat the nonlinear transport/reaction terms explicitly, with
//! adaptive step control and positivity monitoring.
//!
//! Negativity beyond the configured tolerance is an error, not something to
//! clamp away: clamping would silently corrupt the mass-balance identity the
//! analysis relies on.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticsRecord, TimeSeries};
use crate::error::{Result, SimError};
use crate::model::{self, FlowSpec, ModelParams};
use crate::spectral::{forward, inverse, GridSpec, ScalarField, Spectrum, VectorField};

/// Time stepping scheme. Both are integrating-factor (Lawson) schemes; Heun
/// is the second-order default, RK4 is available for convergence studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    IfHeun,
    IfRk4,
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme::IfHeun
    }
}

/// How diagnostics output times are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "spacing")]
pub enum OutputSpacing {
    /// Every `interval` time units.
    Linear { interval: f64 },
    /// Geometric times `t_first * r^j`, `points_per_decade` per decade.
    /// Preferred for runs fitted against log-time laws.
    Geometric {
        t_first: f64,
        points_per_decade: u32,
    },
}

/// Stepper knobs for one run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepperConfig {
    /// Final time (t_end = 0 produces only the initial record).
    pub t_end: f64,
    /// Courant safety factor in (0, 1].
    pub cfl: f64,
    /// Hard cap on the step size.
    pub dt_max: f64,
    /// Relative negativity tolerance: min(rho) >= -tol_pos * max(rho_0).
    pub tol_pos: f64,
    pub scheme: Scheme,
    pub output: OutputSpacing,
    /// Order of the regularity monitor seminorm (default 2).
    pub hs_order: f64,
    /// Optional 4th-order spectral stabilization: the integrating factor
    /// becomes exp(-(|k|^2 + nu4 |k|^4) dt). Exactly neutral for both the
    /// total mass and the second moment (int |x|^2 Lap^2 rho = 0), so the
    /// identities the decay checks rely on are untouched; used to keep
    /// supercritical aggregation cores from ringing at the grid scale.
    pub hyper_nu4: f64,
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(SimError::Config(format!(
                "t_end must be >= 0, got {}",
                self.t_end
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SimError::Config(format!(
                "cfl must be in (0, 1], got {}",
                self.cfl
            )));
        }
        if !(self.dt_max > 0.0) {
            return Err(SimError::Config(format!(
                "dt_max must be positive, got {}",
                self.dt_max
            )));
        }
        if !(self.tol_pos > 0.0) {
            return Err(SimError::Config(format!(
                "tol_pos must be positive, got {}",
                self.tol_pos
            )));
        }
        if !(self.hyper_nu4 >= 0.0) || !self.hyper_nu4.is_finite() {
            return Err(SimError::Config(format!(
                "hyper_nu4 must be >= 0, got {}",
                self.hyper_nu4
            )));
        }
        match self.output {
            OutputSpacing::Linear { interval } => {
                if !(interval > 0.0) {
                    return Err(SimError::Config("output interval must be positive".into()));
                }
            }
            OutputSpacing::Geometric {
                t_first,
                points_per_decade,
            } => {
                if !(t_first > 0.0) || points_per_decade == 0 {
                    return Err(SimError::Config(
                        "geometric output needs t_first > 0 and points_per_decade >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Evolving state of a run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub t: f64,
    pub rho: ScalarField,
    pub dt_last: f64,
    pub step_count: u64,
    pub min_value_seen: f64,
    /// max(rho_0), the reference scale of the negativity floor.
    pub max_rho0: f64,
    /// Running step-granularity trapezoid of the squared L2 norm.
    pub l2sq_integral: f64,
    l2sq_current: f64,
    m0_initial: f64,
}

impl RunState {
    pub fn new(rho0: ScalarField) -> Self {
        let max_rho0 = rho0.max();
        let l2sq = rho0.values().iter().map(|v| v * v).sum::<f64>() * rho0.grid().cell_area();
        let m0 = diagnostics::mass(&rho0);
        Self {
            t: 0.0,
            min_value_seen: rho0.min(),
            rho: rho0,
            dt_last: 0.0,
            step_count: 0,
            max_rho0,
            l2sq_integral: 0.0,
            l2sq_current: l2sq,
            m0_initial: m0,
        }
    }

    /// Negativity floor in absolute units.
    pub fn neg_floor(&self, config: &StepperConfig) -> f64 {
        config.tol_pos * self.max_rho0.max(f64::MIN_POSITIVE)
    }

    /// Mass-balance residual |m0(t) - m0(0) + eps * int l2sq dt| accumulated
    /// at step granularity.
    pub fn balance_residual(&self, epsilon: f64) -> f64 {
        (diagnostics::mass(&self.rho) - self.m0_initial + epsilon * self.l2sq_integral).abs()
    }
}

/// Adaptive step: `min(dt_max, cfl*h/V_max, cfl/(eps*q*max(rho)^(q-1)))`
/// where `V_max` bounds the pointwise transport speed (prescribed flow plus
/// chemotactic drift).
pub fn compute_dt(
    state: &RunState,
    params: &ModelParams,
    velocity: Option<&VectorField>,
    config: &StepperConfig,
) -> Result<f64> {
    let grid = state.rho.grid();
    let mut dt = config.dt_max;

    // Advective limit.
    let v_max = transport_speed_max(&state.rho, params.chi, velocity);
    if v_max > 0.0 {
        dt = dt.min(config.cfl * grid.spacing() / v_max);
    }

    // Explicit reaction limit.
    let peak = state.rho.max().max(0.0);
    if params.epsilon > 0.0 {
        let rate = params.epsilon * params.q * peak.powf(params.q - 1.0);
        if rate > 0.0 {
            dt = dt.min(config.cfl / rate);
        }
    }

    // Chemotactic compression limit: the drift field contracts at rate
    // div v = -2 pi chi (rho - mean rho), which is much stiffer than the
    // advective CFL once a dense core forms.
    if params.chi > 0.0 && peak > 0.0 {
        let rate = 2.0 * std::f64::consts::PI * params.chi * peak;
        dt = dt.min(config.cfl / rate);
    }

    if config.t_end > 0.0 && dt < 1e-12 * config.t_end {
        return Err(SimError::StepCollapse { t: state.t, dt });
    }
    Ok(dt)
}

/// Max over the grid of |u| + |chemo drift|.
fn transport_speed_max(
    rho: &ScalarField,
    chi: f64,
    velocity: Option<&VectorField>,
) -> f64 {
    let chemo = if chi > 0.0 {
        Some(model::chemo_velocity(rho, chi))
    } else {
        None
    };
    match (velocity, &chemo) {
        (None, None) => 0.0,
        (Some(u), None) => u.max_speed(),
        (None, Some(v)) => v.max_speed(),
        (Some(u), Some(v)) => {
            let mut max = 0.0f64;
            let (ux, uy) = (u.x.values(), u.y.values());
            let (vx, vy) = (v.x.values(), v.y.values());
            for (((a, b), c), d) in ux.iter().zip(uy.iter()).zip(vx.iter()).zip(vy.iter()) {
                let speed = (a * a + b * b).sqrt() + (c * c + d * d).sqrt();
                max = max.max(speed);
            }
            max
        }
    }
}

/// Semigroup multiplier `exp(-(|k|^2 + nu4 |k|^4) dt)` on the spectral grid.
fn heat_multiplier(grid: GridSpec, dt: f64, nu4: f64) -> Array2<f64> {
    let n = grid.n();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let ki = grid.wavenumber(i);
        let kj = grid.wavenumber(j);
        let k2 = ki * ki + kj * kj;
        (-(k2 + nu4 * k2 * k2) * dt).exp()
    })
}

fn apply_multiplier(spec: &mut Spectrum, mult: &Array2<f64>) {
    spec.zip_mut_with(mult, |c, &m| *c *= m);
}

fn nonlinear_rhs(
    rho: &ScalarField,
    params: &ModelParams,
    velocity: Option<&VectorField>,
    neg_floor: f64,
) -> Result<ScalarField> {
    Ok(model::assemble_rhs(rho, params, velocity, false, neg_floor)?.value)
}

/// Advance the state by one step. If `t_stop` is given, the step is clipped
/// so the run lands exactly on it (used to hit output times).
pub fn step(
    state: &mut RunState,
    params: &ModelParams,
    velocity: Option<&VectorField>,
    config: &StepperConfig,
    t_stop: Option<f64>,
) -> Result<()> {
    let mut dt = compute_dt(state, params, velocity, config)?;
    if let Some(stop) = t_stop {
        let remaining = stop - state.t;
        if remaining <= 0.0 {
            return Ok(());
        }
        dt = dt.min(remaining);
    }

    let grid = state.rho.grid();
    let floor = state.neg_floor(config);
    let rho_hat = forward(&state.rho);

    let new_rho = match config.scheme {
        Scheme::IfHeun => lawson_heun(state, &rho_hat, params, velocity, config, dt, floor)?,
        Scheme::IfRk4 => lawson_rk4(state, &rho_hat, params, velocity, config, dt, floor)?,
    };

    if !new_rho.is_finite() {
        return Err(SimError::BlowUp {
            t: state.t + dt,
            detail: "non-finite values in the density".into(),
        });
    }
    let min = new_rho.min();
    if min < -floor {
        return Err(SimError::InvalidState {
            t: state.t + dt,
            min_val: min,
            floor,
        });
    }

    let l2sq_new =
        new_rho.values().iter().map(|v| v * v).sum::<f64>() * grid.cell_area();
    state.l2sq_integral += 0.5 * dt * (state.l2sq_current + l2sq_new);
    state.l2sq_current = l2sq_new;
    state.rho = new_rho;
    state.t += dt;
    state.dt_last = dt;
    state.step_count += 1;
    state.min_value_seen = state.min_value_seen.min(min);
    Ok(())
}

fn fill_time(err: SimError, t: f64) -> SimError {
    // Model-level negativity reports carry no time; stamp it here.
    match err {
        SimError::InvalidState {
            min_val, floor, ..
        } => SimError::InvalidState { t, min_val, floor },
        other => other,
    }
}

fn lawson_heun(
    state: &RunState,
    rho_hat: &Spectrum,
    params: &ModelParams,
    velocity: Option<&VectorField>,
    config: &StepperConfig,
    dt: f64,
    floor: f64,
) -> Result<ScalarField> {
    let grid = state.rho.grid();
    let e_full = heat_multiplier(grid, dt, config.hyper_nu4);

    let k1 = nonlinear_rhs(&state.rho, params, velocity, floor)
        .map_err(|e| fill_time(e, state.t))?;
    let k1_hat = forward(&k1);

    // predictor: u1 = E (rho + dt k1)
    let mut pred = rho_hat.clone();
    pred.zip_mut_with(&k1_hat, |a, &b| *a += dt * b);
    apply_multiplier(&mut pred, &e_full);
    let u1 = inverse(&pred, grid);

    let k2 = nonlinear_rhs(&u1, params, velocity, floor)
        .map_err(|e| fill_time(e, state.t + dt))?;

    // corrector: rho' = E (rho + dt/2 k1) + dt/2 k2
    let mut corr = rho_hat.clone();
    corr.zip_mut_with(&k1_hat, |a, &b| *a += 0.5 * dt * b);
    apply_multiplier(&mut corr, &e_full);
    let mut out = inverse(&corr, grid);
    out.add_scaled(&k2, 0.5 * dt);
    Ok(out)
}

fn lawson_rk4(
    state: &RunState,
    rho_hat: &Spectrum,
    params: &ModelParams,
    velocity: Option<&VectorField>,
    config: &StepperConfig,
    dt: f64,
    floor: f64,
) -> Result<ScalarField> {
    let grid = state.rho.grid();
    let e_half = heat_multiplier(grid, 0.5 * dt, config.hyper_nu4);
    let e_full = {
        let mut e = e_half.clone();
        e.mapv_inplace(|v| v * v);
        e
    };
    let t = state.t;

    let k1 = nonlinear_rhs(&state.rho, params, velocity, floor).map_err(|e| fill_time(e, t))?;
    let k1_hat = forward(&k1);

    // U2 = E_half (rho + dt/2 k1)
    let mut s = rho_hat.clone();
    s.zip_mut_with(&k1_hat, |a, &b| *a += 0.5 * dt * b);
    apply_multiplier(&mut s, &e_half);
    let u2 = inverse(&s, grid);
    let k2 = nonlinear_rhs(&u2, params, velocity, floor)
        .map_err(|e| fill_time(e, t + 0.5 * dt))?;
    let k2_hat = forward(&k2);

    // U3 = E_half rho + dt/2 k2
    let mut s = rho_hat.clone();
    apply_multiplier(&mut s, &e_half);
    s.zip_mut_with(&k2_hat, |a, &b| *a += 0.5 * dt * b);
    let u3 = inverse(&s, grid);
    let k3 = nonlinear_rhs(&u3, params, velocity, floor)
        .map_err(|e| fill_time(e, t + 0.5 * dt))?;
    let k3_hat = forward(&k3);

    // U4 = E rho + dt E_half k3
    let mut s = rho_hat.clone();
    apply_multiplier(&mut s, &e_full);
    let mut k3_prop = k3_hat.clone();
    apply_multiplier(&mut k3_prop, &e_half);
    s.zip_mut_with(&k3_prop, |a, &b| *a += dt * b);
    let u4 = inverse(&s, grid);
    let k4 = nonlinear_rhs(&u4, params, velocity, floor)
        .map_err(|e| fill_time(e, t + dt))?;
    let k4_hat = forward(&k4);

    // rho' = E rho + dt/6 (E k1 + 2 E_half (k2 + k3) + k4)
    let mut acc = rho_hat.clone();
    apply_multiplier(&mut acc, &e_full);
    let mut k1_prop = k1_hat;
    apply_multiplier(&mut k1_prop, &e_full);
    let mut mid = k2_hat;
    mid.zip_mut_with(&k3_hat, |a, &b| *a += b);
    apply_multiplier(&mut mid, &e_half);
    let w = dt / 6.0;
    acc.zip_mut_with(&k1_prop, |a, &b| *a += w * b);
    acc.zip_mut_with(&mid, |a, &b| *a += 2.0 * w * b);
    acc.zip_mut_with(&k4_hat, |a, &b| *a += w * b);
    Ok(inverse(&acc, grid))
}

/// Why a run stopped early. Stored alongside the partial series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Failure {
    /// Negativity beyond the tolerance (under-resolution or aggregation
    /// blow-up).
    Negativity { t: f64, min_val: f64, floor: f64 },
    /// Non-finite values.
    BlowUp { t: f64, detail: String },
    /// The adaptive step collapsed.
    StepCollapse { t: f64, dt: f64 },
}

impl Failure {
    fn from_error(err: &SimError) -> Option<Self> {
        match err {
            SimError::InvalidState { t, min_val, floor } => Some(Failure::Negativity {
                t: *t,
                min_val: *min_val,
                floor: *floor,
            }),
            SimError::BlowUp { t, detail } => Some(Failure::BlowUp {
                t: *t,
                detail: detail.clone(),
            }),
            SimError::StepCollapse { t, dt } => Some(Failure::StepCollapse { t: *t, dt: *dt }),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Failure::Negativity { t, min_val, floor } => format!(
                "negativity abort at t = {t:.6}: min {min_val:.3e} < -{floor:.3e} \
                 (likely under-resolution or aggregation blow-up)"
            ),
            Failure::BlowUp { t, detail } => format!("blow-up abort at t = {t:.6}: {detail}"),
            Failure::StepCollapse { t, dt } => {
                format!("step collapse at t = {t:.6}: dt = {dt:.3e}")
            }
        }
    }
}

/// Result of [`integrate`]: the diagnostics series, the final state and an
/// optional abort reason (in which case the series is partial).
#[derive(Debug)]
pub struct RunOutcome {
    pub series: TimeSeries,
    pub state: RunState,
    pub failure: Option<Failure>,
}

impl RunOutcome {
    pub fn record_at_end(&self) -> Option<&DiagnosticsRecord> {
        self.series.records.last()
    }
}

/// Diagnostic output times implied by the stepper config (t = 0 excluded).
pub fn output_times(config: &StepperConfig) -> Vec<f64> {
    let t_end = config.t_end;
    let mut times = Vec::new();
    if t_end <= 0.0 {
        return times;
    }
    match config.output {
        OutputSpacing::Linear { interval } => {
            let mut t = interval;
            while t < t_end * (1.0 - 1e-12) {
                times.push(t);
                t += interval;
            }
            times.push(t_end);
        }
        OutputSpacing::Geometric {
            t_first,
            points_per_decade,
        } => {
            let ratio = 10f64.powf(1.0 / points_per_decade as f64);
            let mut t = t_first.min(t_end);
            while t < t_end * (1.0 - 1e-12) {
                times.push(t);
                t *= ratio;
            }
            times.push(t_end);
        }
    }
    times
}

/// Run from t = 0 to t_end, emitting one diagnostics record at every output
/// time. Deterministic for a fixed configuration. On an abort the partial
/// series (with a final record at the last valid state) is returned together
/// with the failure reason.
pub fn integrate(
    rho0: ScalarField,
    params: &ModelParams,
    flow: &FlowSpec,
    config: &StepperConfig,
) -> Result<RunOutcome> {
    integrate_with(rho0, params, flow, config, |_, _| {})
}

/// [`integrate`] with an observer invoked at every emitted record (used to
/// write field snapshots without retaining every state in memory).
pub fn integrate_with(
    rho0: ScalarField,
    params: &ModelParams,
    flow: &FlowSpec,
    config: &StepperConfig,
    mut observer: impl FnMut(&RunState, &DiagnosticsRecord),
) -> Result<RunOutcome> {
    params.validate()?;
    config.validate()?;
    if !rho0.is_finite() {
        return Err(SimError::Config("initial condition is not finite".into()));
    }
    let grid = rho0.grid();
    let velocity = flow.velocity(grid)?;

    let mut state = RunState::new(rho0);
    let mut series = TimeSeries::default();
    series.push(diagnostics::compute_record(0.0, &state.rho, config.hs_order, 0.0));
    observer(&state, series.records.last().unwrap());

    for t_out in output_times(config) {
        while state.t < t_out * (1.0 - 1e-14) - 1e-300 {
            match step(&mut state, params, velocity.as_ref(), config, Some(t_out)) {
                Ok(()) => {}
                Err(err) => {
                    if let Some(failure) = Failure::from_error(&err) {
                        // record the last valid state before bailing out
                        if state.t > series.records.last().map_or(0.0, |r| r.t) {
                            series.push(diagnostics::compute_record(
                                state.t,
                                &state.rho,
                                config.hs_order,
                                state.balance_residual(params.epsilon),
                            ));
                        }
                        return Ok(RunOutcome {
                            series,
                            state,
                            failure: Some(failure),
                        });
                    }
                    return Err(err);
                }
            }
        }
        state.t = t_out; // kill accumulated round-off at the output point
        series.push(diagnostics::compute_record(
            state.t,
            &state.rho,
            config.hs_order,
            state.balance_residual(params.epsilon),
        ));
        observer(&state, series.records.last().unwrap());
    }

    Ok(RunOutcome {
        series,
        state,
        failure: None,
    })
}
