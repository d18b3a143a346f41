//! Initial-condition construction. Every builder samples a nonnegative
//! profile and renormalizes it so the realized mass matches the target
//! exactly (up to round-off).

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics;
use crate::error::{Result, SimError};
use crate::harness::config::{read_field_csv, IcConfig, IcKind};
use crate::spectral::{GridSpec, ScalarField};

fn gaussian_bump(grid: GridSpec, sigma: f64, cx: f64, cy: f64) -> ScalarField {
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    ScalarField::from_fn(grid, |x, y| {
        let dx = x - cx;
        let dy = y - cy;
        norm * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    })
}

fn renormalize(mut field: ScalarField, mass: f64) -> Result<ScalarField> {
    let measured = diagnostics::mass(&field);
    if !(measured > 0.0) {
        return Err(SimError::Config(
            "initial condition has nonpositive mass before renormalization".into(),
        ));
    }
    field.scale(mass / measured);
    Ok(field)
}

/// Build the initial density on `grid`. Relative paths in `custom_csv` are
/// resolved against `base_dir`.
pub fn build_initial_condition(
    ic: &IcConfig,
    grid: GridSpec,
    base_dir: &Path,
) -> Result<ScalarField> {
    let l = grid.length();
    let center = [l / 2.0, l / 2.0];
    let field = match ic.kind {
        IcKind::Gaussian => {
            let c = ic
                .centers
                .as_ref()
                .and_then(|v| v.first().copied())
                .unwrap_or(center);
            gaussian_bump(grid, ic.sigma, c[0], c[1])
        }
        IcKind::TwoGaussians => {
            let centers = match &ic.centers {
                Some(v) if v.len() >= 2 => [v[0], v[1]],
                Some(_) => {
                    return Err(SimError::Config(
                        "two_gaussians needs two centers (or none for seeded placement)".into(),
                    ))
                }
                None => {
                    // seeded placement well inside the box
                    let mut rng = ChaCha8Rng::seed_from_u64(ic.seed);
                    let mut draw = || {
                        [
                            rng.gen_range(0.25 * l..0.75 * l),
                            rng.gen_range(0.25 * l..0.75 * l),
                        ]
                    };
                    [draw(), draw()]
                }
            };
            let mut f = gaussian_bump(grid, ic.sigma, centers[0][0], centers[0][1]);
            let g = gaussian_bump(grid, ic.sigma, centers[1][0], centers[1][1]);
            f.add_scaled(&g, 1.0);
            f
        }
        IcKind::Plateau => {
            // smooth-edged disc of radius sigma; the edge spans a few cells
            let c = ic
                .centers
                .as_ref()
                .and_then(|v| v.first().copied())
                .unwrap_or(center);
            let edge = 3.0 * grid.spacing();
            let radius = ic.sigma;
            ScalarField::from_fn(grid, |x, y| {
                let r = ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt();
                0.5 * (1.0 - ((r - radius) / edge).tanh())
            })
        }
        IcKind::CustomCsv => {
            let path = ic
                .path
                .as_ref()
                .ok_or_else(|| SimError::Config("custom_csv requires path".into()))?;
            let path = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            let f = read_field_csv(&path, grid)?;
            if f.min() < 0.0 {
                return Err(SimError::Config(
                    "custom initial condition has negative samples".into(),
                ));
            }
            f
        }
    };
    renormalize(field, ic.mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ic(kind: IcKind) -> IcConfig {
        IcConfig {
            kind,
            mass: 1.0,
            sigma: 0.5,
            centers: None,
            seed: 7,
            path: None,
        }
    }

    #[test]
    fn gaussian_hits_target_mass_exactly() {
        let grid = GridSpec::new(64, 16.0).unwrap();
        let f = build_initial_condition(&ic(IcKind::Gaussian), grid, Path::new(".")).unwrap();
        assert!((diagnostics::mass(&f) - 1.0).abs() < 1e-10);
        assert!(f.min() >= 0.0);
    }

    #[test]
    fn two_gaussians_seeded_placement_is_deterministic() {
        let grid = GridSpec::new(64, 16.0).unwrap();
        let a = build_initial_condition(&ic(IcKind::TwoGaussians), grid, Path::new(".")).unwrap();
        let b = build_initial_condition(&ic(IcKind::TwoGaussians), grid, Path::new(".")).unwrap();
        assert_eq!(a.values(), b.values());
        assert!((diagnostics::mass(&a) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn plateau_is_flat_inside() {
        let grid = GridSpec::new(128, 16.0).unwrap();
        let mut cfg = ic(IcKind::Plateau);
        cfg.sigma = 3.0;
        let f = build_initial_condition(&cfg, grid, Path::new(".")).unwrap();
        let c = grid.n() / 2;
        let mid = f.values()[[c, c]];
        let near = f.values()[[c + 8, c]];
        assert!((mid - near).abs() < 1e-3 * mid);
        assert!((diagnostics::mass(&f) - 1.0).abs() < 1e-10);
    }
}
