//! Right-hand side of the density equation: diffusion, prescribed advection,
//! chemotactic drift and the absorbing reaction, plus the library of
//! divergence-free flows.
//!
//! Both transport terms are discretized in conservative (flux) form, so the
//! k = 0 mode of their contribution vanishes identically and mass is
//! conserved to round-off by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::spectral::{
    self, apply_dealias, apply_inverse_laplacian, forward, inverse, GridSpec, ScalarField,
    VectorField,
};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Physics knobs: chemotactic coupling, reaction strength, reaction exponent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelParams {
    /// Chemotactic coupling, >= 0.
    pub chi: f64,
    /// Reaction strength, >= 0.
    pub epsilon: f64,
    /// Reaction exponent, >= 1 (default 2).
    #[serde(default = "default_q")]
    pub q: f64,
}

fn default_q() -> f64 {
    2.0
}

impl ModelParams {
    pub fn new(chi: f64, epsilon: f64, q: f64) -> Result<Self> {
        let p = Self { chi, epsilon, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return Err(SimError::Config(format!("chi must be >= 0, got {}", self.chi)));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(SimError::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.q >= 1.0) || !self.q.is_finite() {
            return Err(SimError::Config(format!("q must be >= 1, got {}", self.q)));
        }
        Ok(())
    }
}

/// Built-in divergence-free flows. Every variant is realized as
/// `u = perp-grad H` for a globally bounded stream function `H`, so the
/// velocity is divergence free by construction.
#[derive(Debug, Clone)]
pub enum FlowSpec {
    /// No ambient flow.
    None,
    /// Doubly periodic array of vortices,
    /// `H(x, y) = A sin(2 pi m x / L) sin(2 pi m y / L)`.
    Cellular { amplitude: f64, wavenumber: u32 },
    /// A user-supplied sampled stream function.
    Custom { stream: ScalarField },
}

impl FlowSpec {
    /// Realize the velocity field on `grid`; `None` for quiescent fluid.
    pub fn velocity(&self, grid: GridSpec) -> Result<Option<VectorField>> {
        match self {
            FlowSpec::None => Ok(None),
            FlowSpec::Cellular {
                amplitude,
                wavenumber,
            } => {
                let m = *wavenumber as i64;
                if m < 1 {
                    return Err(SimError::Config(
                        "cellular flow wavenumber must be >= 1".into(),
                    ));
                }
                // Keep the stream below the dealiasing cutoff so that flux
                // products remain alias-free.
                if m > grid.dealias_cutoff() {
                    return Err(SimError::Config(format!(
                        "cellular wavenumber {} exceeds the dealias cutoff {} of an n = {} grid",
                        m,
                        grid.dealias_cutoff(),
                        grid.n()
                    )));
                }
                let a = *amplitude;
                let l = grid.length();
                let stream = ScalarField::from_fn(grid, |x, y| {
                    a * (TWO_PI * m as f64 * x / l).sin() * (TWO_PI * m as f64 * y / l).sin()
                });
                Ok(Some(velocity_from_stream(&stream)))
            }
            FlowSpec::Custom { stream } => {
                if stream.grid() != grid {
                    return Err(SimError::Config(
                        "custom stream function sampled on a different grid".into(),
                    ));
                }
                // Band-limit the user samples before differentiating.
                let stream = spectral::dealias(stream);
                Ok(Some(velocity_from_stream(&stream)))
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, FlowSpec::None)
    }
}

/// `u = perp-grad H = (-dH/dy, dH/dx)`; divergence free for any stream `H`.
pub fn velocity_from_stream(stream: &ScalarField) -> VectorField {
    let g = spectral::gradient(stream);
    let ux = ScalarField::from_values(stream.grid(), g.y.values().mapv(|v| -v))
        .expect("same grid");
    VectorField::new(ux, g.x)
}

/// The attractive potential generated by the density itself.
///
/// Normalization: `psi` solves `Lap psi = 2 pi (rho - mean rho)`, i.e. `psi`
/// is the convolution of `rho` with the logarithmic kernel `log|x|`. With
/// this normalization the interaction identity
/// `d/dt int |x|^2 rho = 4 m0 - chi m0^2 + ...` holds with clean constants,
/// which is the form the closed-form decay bounds in [`crate::theory`]
/// assume. The drift velocity is `-chi grad psi`, pointing toward density
/// maxima.
pub fn chemo_potential(rho: &ScalarField) -> ScalarField {
    let grid = rho.grid();
    let mut spec = forward(rho);
    apply_inverse_laplacian(&mut spec, &grid);
    for c in spec.iter_mut() {
        *c *= TWO_PI;
    }
    inverse(&spec, grid)
}

/// Drift velocity `-chi grad psi` induced by the density.
pub fn chemo_velocity(rho: &ScalarField, chi: f64) -> VectorField {
    let g = spectral::gradient(&chemo_potential(rho));
    let grid = rho.grid();
    VectorField::new(
        ScalarField::from_values(grid, g.x.values().mapv(|v| -chi * v)).unwrap(),
        ScalarField::from_values(grid, g.y.values().mapv(|v| -chi * v)).unwrap(),
    )
}

/// Chemotactic term `chi div(rho grad psi)` in conservative form, with the
/// density dealiased before the product and the flux dealiased after it.
/// The spatial mean of the result is zero to machine precision.
///
/// The transported density is the positive part of the dealiased field. On
/// admissible (nonnegative) states this is the identity; its only effect is
/// to stop truncation-level negative lobes from feeding the quadratic
/// self-attraction during under-resolved aggregation transients, which
/// would otherwise pump a sign-oscillating grid-scale mode without bound.
/// Being inside the divergence it conserves mass exactly either way.
pub fn chemo_term(rho: &ScalarField, chi: f64) -> ScalarField {
    let grid = rho.grid();
    let psi_grad = spectral::gradient(&chemo_potential(rho));
    let rho_d = transported_density(rho);
    let flux_x =
        ScalarField::from_values(grid, rho_d.values() * psi_grad.x.values()).unwrap();
    let flux_y =
        ScalarField::from_values(grid, rho_d.values() * psi_grad.y.values()).unwrap();
    let mut div = flux_divergence(&flux_x, &flux_y);
    div.scale(chi);
    div
}

/// Dealiased positive part, the density entering every transport flux.
fn transported_density(rho: &ScalarField) -> ScalarField {
    let mut d = spectral::dealias(rho);
    d.values_mut().mapv_inplace(|v| v.max(0.0));
    d
}

/// Divergence of a flux whose factors were band-limited: transform, mask the
/// aliased tail, combine with i*k.
fn flux_divergence(fx: &ScalarField, fy: &ScalarField) -> ScalarField {
    let grid = fx.grid();
    let mut sx = forward(fx);
    let mut sy = forward(fy);
    apply_dealias(&mut sx, &grid);
    apply_dealias(&mut sy, &grid);
    let n = grid.n();
    let mut out = sx; // reuse storage
    for i in 0..n {
        let di = derivative(grid, i);
        for j in 0..n {
            let dj = derivative(grid, j);
            out[[i, j]] = di * out[[i, j]] + dj * sy[[i, j]];
        }
    }
    inverse(&out, grid)
}

fn derivative(grid: GridSpec, i: usize) -> num_complex::Complex64 {
    // Mirrors the convention in `spectral`: Nyquist zeroed.
    let n = grid.n() as i64;
    let j = {
        let i = i as i64;
        if i <= n / 2 - 1 {
            i
        } else {
            i - n
        }
    };
    if j == -n / 2 {
        num_complex::Complex64::new(0.0, 0.0)
    } else {
        num_complex::Complex64::new(0.0, TWO_PI * j as f64 / grid.length())
    }
}

/// Reaction sink `-eps rho^q`. For integer exponents up to 3 the pointwise
/// power is dealiased; for non-integer `q` negative values are clamped to
/// zero before the power (and no dealiasing is applied, since the result is
/// not polynomial in rho).
///
/// Signals an invalid state if any sample lies below `-neg_floor`.
pub fn reaction_term(
    rho: &ScalarField,
    epsilon: f64,
    q: f64,
    neg_floor: f64,
) -> Result<ScalarField> {
    let grid = rho.grid();
    if epsilon == 0.0 {
        return Ok(ScalarField::zeros(grid));
    }
    let min = rho.min();
    if min < -neg_floor {
        return Err(SimError::InvalidState {
            t: f64::NAN,
            min_val: min,
            floor: neg_floor,
        });
    }
    let is_small_integer = q.fract() == 0.0 && (1.0..=3.0).contains(&q);
    let powered = if is_small_integer {
        let p = q as i32;
        ScalarField::from_values(grid, rho.values().mapv(|v| v.powi(p))).unwrap()
    } else {
        ScalarField::from_values(grid, rho.values().mapv(|v| v.max(0.0).powf(q))).unwrap()
    };
    let mut out = if is_small_integer && q > 1.0 {
        spectral::dealias(&powered)
    } else {
        powered
    };
    out.scale(-epsilon);
    Ok(out)
}

/// The assembled time derivative of rho (optionally without the stiff
/// diffusion term, which the integrating-factor stepper applies exactly).
#[derive(Debug, Clone)]
pub struct Tendency {
    pub value: ScalarField,
    pub includes_diffusion: bool,
}

/// Assemble the right-hand side:
/// `[Lap rho] - div((u - chi grad psi) rho) - eps rho^q`,
/// with advection and chemotaxis combined into a single conservative flux.
///
/// `velocity` is the prescribed flow realized on the grid (see
/// [`FlowSpec::velocity`]); pass `None` for quiescent fluid.
pub fn assemble_rhs(
    rho: &ScalarField,
    params: &ModelParams,
    velocity: Option<&VectorField>,
    include_diffusion: bool,
    neg_floor: f64,
) -> Result<Tendency> {
    let grid = rho.grid();
    let mut out = reaction_term(rho, params.epsilon, params.q, neg_floor)?;

    let chemo = params.chi > 0.0;
    if chemo || velocity.is_some() {
        // Transport velocity w = u - chi grad psi, then conservative flux
        // div(rho_d w).
        let mut wx;
        let mut wy;
        if chemo {
            let v = chemo_velocity(rho, params.chi);
            wx = v.x;
            wy = v.y;
            if let Some(u) = velocity {
                wx.add_scaled(&u.x, 1.0);
                wy.add_scaled(&u.y, 1.0);
            }
        } else {
            let u = velocity.expect("checked above");
            wx = u.x.clone();
            wy = u.y.clone();
        }
        let rho_d = transported_density(rho);
        let flux_x = ScalarField::from_values(grid, rho_d.values() * wx.values()).unwrap();
        let flux_y = ScalarField::from_values(grid, rho_d.values() * wy.values()).unwrap();
        let div = flux_divergence(&flux_x, &flux_y);
        out.add_scaled(&div, -1.0);
    }

    if include_diffusion {
        out.add_scaled(&spectral::laplacian(rho), 1.0);
    }

    Ok(Tendency {
        value: out,
        includes_diffusion: include_diffusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid_2pi(n: usize) -> GridSpec {
        GridSpec::new(n, 2.0 * PI).unwrap()
    }

    fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values()
            .iter()
            .zip(b.values().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn gaussian(grid: GridSpec, mass: f64, sigma: f64) -> ScalarField {
        let c = grid.length() / 2.0;
        let norm = mass / (2.0 * PI * sigma * sigma);
        ScalarField::from_fn(grid, |x, y| {
            let dx = x - c;
            let dy = y - c;
            norm * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn stream_velocity_single_mode() {
        let grid = grid_2pi(64);
        let h = ScalarField::from_fn(grid, |x, y| x.sin() * y.sin());
        let u = velocity_from_stream(&h);
        let ex = ScalarField::from_fn(grid, |x, y| -x.sin() * y.cos());
        let ey = ScalarField::from_fn(grid, |x, y| x.cos() * y.sin());
        assert!(max_abs_diff(&u.x, &ex) < 1e-12);
        assert!(max_abs_diff(&u.y, &ey) < 1e-12);
    }

    #[test]
    fn stream_constant_gives_zero_velocity() {
        let grid = grid_2pi(16);
        let h = ScalarField::constant(grid, 4.2);
        let u = velocity_from_stream(&h);
        assert!(u.max_speed() < 1e-13);
    }

    #[test]
    fn stream_velocity_divergence_free() {
        let grid = grid_2pi(64);
        let h = crate::spectral::testutil::random_band_limited(grid, 7, 42);
        let u = velocity_from_stream(&h);
        let div = spectral::divergence(&u);
        assert!(div.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cellular_flow_divergence_free_and_bounded() {
        let grid = GridSpec::new(64, 10.0).unwrap();
        let flow = FlowSpec::Cellular {
            amplitude: 1.5,
            wavenumber: 3,
        };
        let u = flow.velocity(grid).unwrap().unwrap();
        let div = spectral::divergence(&u);
        assert!(div.values().iter().all(|v| v.abs() < 1e-12));
        // |u| <= A * 2 pi m / L
        let bound = 1.5 * TWO_PI * 3.0 / 10.0 + 1e-12;
        assert!(u.max_speed() <= bound);
    }

    #[test]
    fn cellular_wavenumber_must_stay_below_cutoff() {
        let grid = GridSpec::new(64, 10.0).unwrap();
        let flow = FlowSpec::Cellular {
            amplitude: 1.0,
            wavenumber: 22, // cutoff for n = 64 is 21
        };
        assert!(flow.velocity(grid).is_err());
    }

    #[test]
    fn chemo_term_of_constant_is_zero() {
        let grid = grid_2pi(32);
        let rho = ScalarField::constant(grid, 0.7);
        let c = chemo_term(&rho, 1.0);
        assert!(c.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn chemo_term_single_mode_oracle() {
        // rho = 1 + a cos x: psi = -2 pi a cos x, grad psi = (2 pi a sin x, 0),
        // flux rho * grad psi = 2 pi (a sin x + a^2/2 sin 2x),
        // term = chi * 2 pi (a cos x + a^2 cos 2x).
        let grid = grid_2pi(64);
        let a = 0.3;
        let rho = ScalarField::from_fn(grid, |x, _| 1.0 + a * x.cos());
        let c = chemo_term(&rho, 1.0);
        let expected = ScalarField::from_fn(grid, |x, _| {
            TWO_PI * (a * x.cos() + a * a * (2.0 * x).cos())
        });
        assert!(max_abs_diff(&c, &expected) < 1e-11);
    }

    #[test]
    fn chemo_velocity_points_toward_bump() {
        let grid = GridSpec::new(128, 20.0).unwrap();
        let rho = gaussian(grid, 1.0, 1.0);
        let v = chemo_velocity(&rho, 2.0);
        // along +x from the center the x-velocity must be negative (inward)
        let c = grid.n() / 2;
        for offset in [4usize, 8, 16, 24] {
            let vx = v.x.values()[[c + offset, c]];
            assert!(vx < 0.0, "offset {offset}: vx = {vx}");
        }
        // and positive on the other side
        for offset in [4usize, 8, 16, 24] {
            let vx = v.x.values()[[c - offset, c]];
            assert!(vx > 0.0, "offset {offset}: vx = {vx}");
        }
    }

    #[test]
    fn chemo_term_raises_the_peak() {
        let grid = GridSpec::new(128, 20.0).unwrap();
        let rho = gaussian(grid, 1.0, 1.0);
        let c = chemo_term(&rho, 1.0);
        let peak = grid.n() / 2;
        assert!(c.values()[[peak, peak]] > 0.0);
    }

    #[test]
    fn chemo_term_linear_in_chi() {
        let grid = grid_2pi(64);
        let rho = ScalarField::from_fn(grid, |x, y| 1.0 + 0.4 * x.cos() + 0.2 * (y).sin());
        let c1 = chemo_term(&rho, 0.8);
        let c2 = chemo_term(&rho, 1.6);
        let diff = c1
            .values()
            .iter()
            .zip(c2.values().iter())
            .map(|(a, b)| (2.0 * a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-14);
    }

    #[test]
    fn reaction_uniform_field() {
        let grid = grid_2pi(16);
        let rho = ScalarField::constant(grid, 2.0);
        let r = reaction_term(&rho, 0.5, 2.0, 1e-9).unwrap();
        assert!(r.values().iter().all(|v| (v + 2.0).abs() < 1e-13));
    }

    #[test]
    fn reaction_zero_epsilon() {
        let grid = grid_2pi(16);
        let rho = ScalarField::constant(grid, 2.0);
        let r = reaction_term(&rho, 0.0, 2.0, 1e-9).unwrap();
        assert!(r.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reaction_integral_matches_l2_norm() {
        let grid = GridSpec::new(64, 5.0).unwrap();
        let rho = gaussian(grid, 1.0, 0.6);
        let eps = 0.7;
        let r = reaction_term(&rho, eps, 2.0, 1e-9).unwrap();
        let h2 = grid.cell_area();
        let integral: f64 = r.values().sum() * h2;
        let l2sq: f64 = rho.values().iter().map(|v| v * v).sum::<f64>() * h2;
        assert!(
            (integral + eps * l2sq).abs() < 1e-10 * l2sq,
            "integral {integral} vs -eps*l2sq {}",
            -eps * l2sq
        );
    }

    #[test]
    fn reaction_linear_in_epsilon() {
        let grid = grid_2pi(32);
        let rho = ScalarField::from_fn(grid, |x, y| 1.0 + 0.3 * (x + y).cos());
        let r1 = reaction_term(&rho, 0.25, 2.0, 1e-9).unwrap();
        let r2 = reaction_term(&rho, 0.5, 2.0, 1e-9).unwrap();
        let diff = r1
            .values()
            .iter()
            .zip(r2.values().iter())
            .map(|(a, b)| (2.0 * a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-14);
    }

    #[test]
    fn reaction_rejects_negative_state() {
        let grid = grid_2pi(16);
        let rho = ScalarField::constant(grid, -1.0);
        assert!(matches!(
            reaction_term(&rho, 1.0, 2.0, 1e-6),
            Err(SimError::InvalidState { .. })
        ));
    }

    #[test]
    fn reaction_non_integer_q_clamps_negatives() {
        let grid = grid_2pi(16);
        let mut rho = ScalarField::constant(grid, 1.0);
        rho.values_mut()[[0, 0]] = -1e-8; // within floor
        let r = reaction_term(&rho, 1.0, 1.5, 1e-6).unwrap();
        assert_eq!(r.values()[[0, 0]], 0.0);
        assert!((r.values()[[3, 3]] + 1.0).abs() < 1e-13);
    }

    #[test]
    fn rhs_uniform_density_reduces_to_reaction() {
        let grid = grid_2pi(32);
        let rho = ScalarField::constant(grid, 1.3);
        let params = ModelParams::new(2.0, 0.5, 2.0).unwrap();
        let t = assemble_rhs(&rho, &params, None, true, 1e-9).unwrap();
        let expected = -0.5 * 1.3 * 1.3;
        assert!(t
            .value
            .values()
            .iter()
            .all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn rhs_heat_eigenmode() {
        let grid = grid_2pi(32);
        let rho = ScalarField::from_fn(grid, |x, _| x.cos());
        let params = ModelParams::new(0.0, 0.0, 2.0).unwrap();
        let t = assemble_rhs(&rho, &params, None, true, 1e-9).unwrap();
        let expected = ScalarField::from_fn(grid, |x, _| -x.cos());
        assert!(max_abs_diff(&t.value, &expected) < 1e-12);
    }

    #[test]
    fn rhs_is_sum_of_terms() {
        let grid = grid_2pi(64);
        let rho = ScalarField::from_fn(grid, |x, y| 1.0 + 0.3 * x.cos() + 0.1 * y.sin());
        let params = ModelParams::new(1.7, 0.4, 2.0).unwrap();
        let flow = FlowSpec::Cellular {
            amplitude: 0.9,
            wavenumber: 2,
        };
        let u = flow.velocity(grid).unwrap().unwrap();

        let total = assemble_rhs(&rho, &params, Some(&u), true, 1e-9).unwrap();

        // term-by-term: diffusion + chemo + reaction - advection
        let mut sum = spectral::laplacian(&rho);
        sum.add_scaled(&chemo_term(&rho, params.chi), 1.0);
        sum.add_scaled(
            &reaction_term(&rho, params.epsilon, params.q, 1e-9).unwrap(),
            1.0,
        );
        let rho_d = spectral::dealias(&rho);
        let fx = ScalarField::from_values(grid, rho_d.values() * u.x.values()).unwrap();
        let fy = ScalarField::from_values(grid, rho_d.values() * u.y.values()).unwrap();
        sum.add_scaled(&super::flux_divergence(&fx, &fy), -1.0);

        assert!(max_abs_diff(&total.value, &sum) < 1e-13);
    }

    #[test]
    fn transport_terms_conserve_mass() {
        let grid = GridSpec::new(64, 12.0).unwrap();
        let rho = gaussian(grid, 2.0, 1.0);
        let params = ModelParams::new(3.0, 0.0, 2.0).unwrap();
        let flow = FlowSpec::Cellular {
            amplitude: 1.0,
            wavenumber: 3,
        };
        let u = flow.velocity(grid).unwrap().unwrap();
        let t = assemble_rhs(&rho, &params, Some(&u), false, 1e-9).unwrap();
        let mass_rate: f64 = t.value.values().sum() * grid.cell_area();
        let m0: f64 = rho.values().sum() * grid.cell_area();
        assert!(mass_rate.abs() < 1e-12 * m0);
        assert!(t.value.mean().abs() < 1e-12);
    }
}
