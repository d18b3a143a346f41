//! Observables the decay theory constrains: total mass, second moment,
//! norms, interaction area, mass-balance residual and the regularity
//! monitor, plus the time-series container they are collected in.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::spectral::{self, ScalarField};

/// Fraction of mass allowed within one cell of the box edge before a record
/// is flagged as no longer faithful to the whole-plane problem.
pub const BOUNDARY_MASS_TOL: f64 = 1e-6;

/// One output-time row of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// Total mass, h^2 * sum(rho).
    pub m0: f64,
    /// Second moment about the mass centroid (torus metric); NaN when the
    /// centroid is ill-conditioned (near-uniform density).
    pub m2: f64,
    /// Squared L2 norm.
    pub l2sq: f64,
    /// Maximum of rho.
    pub linf: f64,
    /// Homogeneous H^s seminorm (s = 2 unless configured otherwise).
    pub hs: f64,
    /// Minimum of rho.
    pub min_val: f64,
    /// Interaction area m0^2 / l2sq.
    pub area: f64,
    /// Cumulative |m0(t) - m0(0) + eps * int l2sq dt| (step-granularity
    /// trapezoid accumulated by the integrator).
    pub balance_residual: f64,
    /// True while the boundary ring carries less than `BOUNDARY_MASS_TOL`
    /// of the mass.
    pub validity_flag: bool,
}

/// CSV column order is fixed; everything downstream relies on it.
pub const CSV_HEADER: &str = "t,m0,m2,l2sq,linf,hs,min_val,area,balance_residual,validity_flag";

impl DiagnosticsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.t,
            self.m0,
            self.m2,
            self.l2sq,
            self.linf,
            self.hs,
            self.min_val,
            self.area,
            self.balance_residual,
            if self.validity_flag { 1 } else { 0 },
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() != 10 {
            return Err(SimError::Parse(format!(
                "expected 10 columns, got {}: {row:?}",
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| SimError::Parse(format!("column {i}: {e}")))
        };
        Ok(Self {
            t: num(0)?,
            m0: num(1)?,
            m2: num(2)?,
            l2sq: num(3)?,
            linf: num(4)?,
            hs: num(5)?,
            min_val: num(6)?,
            area: num(7)?,
            balance_residual: num(8)?,
            validity_flag: fields[9].trim() == "1",
        })
    }
}

/// Ordered diagnostics records of one run; first record at t = 0, strictly
/// increasing times.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimeSeries {
    pub records: Vec<DiagnosticsRecord>,
}

impl TimeSeries {
    pub fn push(&mut self, record: DiagnosticsRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.t > last.t, "records must have increasing t");
        }
        self.records.push(record);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Records with t inside `[lo, hi]`.
    pub fn window(&self, lo: f64, hi: f64) -> Vec<&DiagnosticsRecord> {
        self.records
            .iter()
            .filter(|r| r.t >= lo && r.t <= hi)
            .collect()
    }

    /// All records localized (boundary flag true)?
    pub fn all_valid(&self) -> bool {
        self.records.iter().all(|r| r.validity_flag)
    }

    /// First time at which m0 drops to `fraction * m0(0)`, linearly
    /// interpolated between records. `None` if never reached.
    pub fn mass_fraction_time(&self, fraction: f64) -> Option<f64> {
        let target = self.records.first()?.m0 * fraction;
        let mut prev = self.records.first()?;
        for r in &self.records[1..] {
            if r.m0 <= target {
                let w = if (prev.m0 - r.m0).abs() > 0.0 {
                    (prev.m0 - target) / (prev.m0 - r.m0)
                } else {
                    1.0
                };
                return Some(prev.t + w * (r.t - prev.t));
            }
            prev = r;
        }
        None
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.to_csv_row())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| SimError::Parse("empty series file".into()))??;
        if header.trim() != CSV_HEADER {
            return Err(SimError::Parse(format!(
                "unexpected series header: {header:?}"
            )));
        }
        let mut series = TimeSeries::default();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            series.records.push(DiagnosticsRecord::from_csv_row(&line)?);
        }
        Ok(series)
    }
}

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

/// Total mass m0 = h^2 * sum(rho).
pub fn mass(rho: &ScalarField) -> f64 {
    rho.values().sum() * rho.grid().cell_area()
}

/// Mass centroid via per-axis circular means (minimal-image averaging).
/// Fails with `Delocalized` when the angular resultant is too small to
/// condition the mean, e.g. for near-uniform densities.
pub fn centroid(rho: &ScalarField) -> Result<(f64, f64)> {
    let grid = rho.grid();
    let n = grid.n();
    let l = grid.length();
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut weight = 0.0;
    let (mut cx, mut sx, mut cy, mut sy) = (0.0, 0.0, 0.0, 0.0);
    // Per-axis marginals are enough for the circular mean.
    let mut row_sum = vec![0.0; n];
    let mut col_sum = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let v = rho.values()[[i, j]];
            row_sum[i] += v;
            col_sum[j] += v;
            weight += v;
        }
    }
    for i in 0..n {
        let theta = two_pi * grid.coord(i) / l;
        cx += row_sum[i] * theta.cos();
        sx += row_sum[i] * theta.sin();
        cy += col_sum[i] * theta.cos();
        sy += col_sum[i] * theta.sin();
    }
    if weight <= 0.0 {
        return Err(SimError::Delocalized { resultant: 0.0 });
    }
    let rx = (cx * cx + sx * sx).sqrt() / weight;
    let ry = (cy * cy + sy * sy).sqrt() / weight;
    let resultant = rx.min(ry);
    if resultant < 1e-9 {
        return Err(SimError::Delocalized { resultant });
    }
    let wrap = |angle: f64| {
        let mut x = angle / two_pi * l;
        if x < 0.0 {
            x += l;
        }
        x
    };
    Ok((wrap(sx.atan2(cx)), wrap(sy.atan2(cy))))
}

/// Minimal-image distance on the torus.
fn torus_delta(a: f64, b: f64, l: f64) -> f64 {
    let mut d = (a - b).abs() % l;
    if d > l / 2.0 {
        d = l - d;
    }
    d
}

/// Second moment about the mass centroid, torus metric. Recovers the
/// whole-plane second moment while the mass stays localized (which the
/// validity flag tracks).
pub fn second_moment(rho: &ScalarField) -> Result<f64> {
    let (cx, cy) = centroid(rho)?;
    let grid = rho.grid();
    let l = grid.length();
    let n = grid.n();
    let mut acc = 0.0;
    for i in 0..n {
        let dx = torus_delta(grid.coord(i), cx, l);
        for j in 0..n {
            let dy = torus_delta(grid.coord(j), cy, l);
            acc += rho.values()[[i, j]] * (dx * dx + dy * dy);
        }
    }
    Ok(acc * grid.cell_area())
}

/// (l2sq, linf, hs): squared L2 norm, max value, homogeneous H^s seminorm.
///
/// With the crate's transform normalization, `l2sq = (h^2/n^2) sum |rho_hat|^2`
/// and `hs^2 = (h^2/n^2) sum |k|^(2s) |rho_hat|^2`, consistent with computing
/// the s = 2 seminorm as the L2 norm of the Laplacian.
pub fn norms(rho: &ScalarField, s: f64) -> (f64, f64, f64) {
    let grid = rho.grid();
    let h2 = grid.cell_area();
    let l2sq: f64 = rho.values().iter().map(|v| v * v).sum::<f64>() * h2;
    let linf = rho.max();

    let spec = spectral::forward(rho);
    let n = grid.n();
    let mut hs_sq = 0.0;
    for i in 0..n {
        let ki = grid.wavenumber(i);
        for j in 0..n {
            let kj = grid.wavenumber(j);
            let k2 = ki * ki + kj * kj;
            if k2 > 0.0 {
                hs_sq += k2.powf(s) * spec[[i, j]].norm_sqr();
            }
        }
    }
    hs_sq *= h2 / (n * n) as f64;
    (l2sq, linf, hs_sq.sqrt())
}

/// Effective support measure m0^2 / |rho|_L2^2 (equality case: an indicator
/// plateau of area A gives exactly A). Returns infinity if l2sq underflows.
pub fn interaction_area(m0: f64, l2sq: f64) -> f64 {
    if l2sq <= f64::MIN_POSITIVE {
        f64::INFINITY
    } else {
        m0 * m0 / l2sq
    }
}

/// Fraction of the mass within one cell of the domain edge.
pub fn boundary_mass_fraction(rho: &ScalarField) -> f64 {
    let grid = rho.grid();
    let n = grid.n();
    let mut edge = 0.0;
    for i in 0..n {
        edge += rho.values()[[i, 0]] + rho.values()[[i, n - 1]];
    }
    for j in 1..n - 1 {
        edge += rho.values()[[0, j]] + rho.values()[[n - 1, j]];
    }
    let total: f64 = rho.values().sum();
    if total <= 0.0 {
        return 1.0;
    }
    edge / total
}

/// Optional weighted norm `h^2 sum (|rho| + |grad rho|)(1 + d^n)` with `d`
/// the torus distance from the mass centroid. Exposed as an extra
/// diagnostic only; it plays no role in the decay checks.
pub fn weighted_m_norm(rho: &ScalarField, n_weight: u32) -> Result<f64> {
    let (cx, cy) = centroid(rho)?;
    let grid = rho.grid();
    let g = spectral::gradient(rho);
    let l = grid.length();
    let n = grid.n();
    let mut acc = 0.0;
    for i in 0..n {
        let dx = torus_delta(grid.coord(i), cx, l);
        for j in 0..n {
            let dy = torus_delta(grid.coord(j), cy, l);
            let d = (dx * dx + dy * dy).sqrt();
            let gmag = (g.x.values()[[i, j]].powi(2) + g.y.values()[[i, j]].powi(2)).sqrt();
            acc += (rho.values()[[i, j]].abs() + gmag) * (1.0 + d.powi(n_weight as i32));
        }
    }
    Ok(acc * grid.cell_area())
}

/// Assemble one record from a field. `balance_residual` comes from the
/// integrator's step-granularity accumulation; post-hoc recomputation from a
/// stored series is available via [`balance_residual_series`].
pub fn compute_record(
    t: f64,
    rho: &ScalarField,
    hs_order: f64,
    balance_residual: f64,
) -> DiagnosticsRecord {
    let m0 = mass(rho);
    let (l2sq, linf, hs) = norms(rho, hs_order);
    let m2 = second_moment(rho).unwrap_or(f64::NAN);
    DiagnosticsRecord {
        t,
        m0,
        m2,
        l2sq,
        linf,
        hs,
        min_val: rho.min(),
        area: interaction_area(m0, l2sq),
        balance_residual,
        validity_flag: boundary_mass_fraction(rho) < BOUNDARY_MASS_TOL,
    }
}

/// Recompute the mass-balance residual per record from a stored series:
/// `|m0(t) - m0(0) + eps * int_0^t l2sq dt|` with the integral accumulated
/// by the trapezoid rule at record granularity.
pub fn balance_residual_series(series: &TimeSeries, epsilon: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let Some(first) = series.records.first() else {
        return out;
    };
    let m0_initial = first.m0;
    let mut integral = 0.0;
    let mut prev = first;
    for r in &series.records {
        integral += 0.5 * (r.t - prev.t) * (r.l2sq + prev.l2sq);
        out.push((r.m0 - m0_initial + epsilon * integral).abs());
        prev = r;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::GridSpec;
    use std::f64::consts::PI;

    fn gaussian(grid: GridSpec, mass: f64, sigma: f64, cx: f64, cy: f64) -> ScalarField {
        let norm = mass / (2.0 * PI * sigma * sigma);
        ScalarField::from_fn(grid, |x, y| {
            let dx = x - cx;
            let dy = y - cy;
            norm * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn mass_of_unit_field() {
        let grid = GridSpec::new(32, 2.0 * PI).unwrap();
        let f = ScalarField::constant(grid, 1.0);
        let expected = (2.0 * PI) * (2.0 * PI);
        assert!((mass(&f) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn mass_of_gaussian() {
        let grid = GridSpec::new(128, 16.0).unwrap();
        let f = gaussian(grid, 1.0, 0.8, 8.0, 8.0);
        assert!((mass(&f) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mass_is_linear() {
        let grid = GridSpec::new(32, 4.0).unwrap();
        let f = gaussian(grid, 1.0, 0.5, 2.0, 2.0);
        let mut g = f.clone();
        g.scale(3.25);
        let (a, b) = (mass(&g), 3.25 * mass(&f));
        assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
    }

    #[test]
    fn second_moment_of_point_bump() {
        let grid = GridSpec::new(64, 8.0).unwrap();
        let mut f = ScalarField::zeros(grid);
        let c = grid.n() / 2;
        f.values_mut()[[c, c]] = 1.0 / grid.cell_area();
        let m2 = second_moment(&f).unwrap();
        assert!(m2 < 4.0 * grid.cell_area());
    }

    #[test]
    fn second_moment_of_gaussian() {
        let grid = GridSpec::new(128, 16.0).unwrap();
        let sigma = 0.9;
        let f = gaussian(grid, 1.0, sigma, 8.0, 8.0);
        let m2 = second_moment(&f).unwrap();
        let expected = 2.0 * sigma * sigma;
        assert!(
            (m2 - expected).abs() < 0.01 * expected,
            "m2 = {m2}, expected {expected}"
        );
    }

    #[test]
    fn second_moment_translation_invariant() {
        let grid = GridSpec::new(128, 16.0).unwrap();
        let f = gaussian(grid, 1.0, 0.7, 8.0, 8.0);
        // translate by half a box on both axes: the bump wraps around the
        // corner, so sum the periodic images
        let g = {
            let mut sum = ScalarField::zeros(grid);
            for ix in [-1.0, 0.0, 1.0] {
                for iy in [-1.0, 0.0, 1.0] {
                    let img = gaussian(grid, 1.0, 0.7, ix * 16.0, iy * 16.0);
                    sum.add_scaled(&img, 1.0);
                }
            }
            sum
        };
        let a = second_moment(&f).unwrap();
        let b = second_moment(&g).unwrap();
        assert!((a - b).abs() < 1e-10, "a = {a}, b = {b}");
    }

    #[test]
    fn second_moment_rejects_uniform() {
        let grid = GridSpec::new(32, 4.0).unwrap();
        let f = ScalarField::constant(grid, 1.0);
        assert!(matches!(
            second_moment(&f),
            Err(SimError::Delocalized { .. })
        ));
    }

    #[test]
    fn norms_of_single_mode() {
        let grid = GridSpec::new(64, 2.0 * PI).unwrap();
        let f = ScalarField::from_fn(grid, |x, _| x.cos());
        let (l2sq, linf, hs) = norms(&f, 2.0);
        let expected_l2 = 2.0 * PI * PI; // int cos^2 over the box
        assert!((l2sq - expected_l2).abs() < 1e-12 * expected_l2);
        assert!((linf - 1.0).abs() < 1e-12);
        // |k| = 1 so the s = 2 seminorm equals the L2 norm
        assert!((hs - expected_l2.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hs_kills_constants() {
        let grid = GridSpec::new(32, 5.0).unwrap();
        let f = ScalarField::constant(grid, 3.0);
        let (_, _, hs) = norms(&f, 2.0);
        assert!(hs < 1e-12);
    }

    #[test]
    fn hs_matches_laplacian_route() {
        let grid = GridSpec::new(64, 7.0).unwrap();
        let f = crate::spectral::testutil::random_band_limited(grid, 8, 33);
        let (_, _, hs) = norms(&f, 2.0);
        let lap = spectral::laplacian(&f);
        let l2_of_lap =
            (lap.values().iter().map(|v| v * v).sum::<f64>() * grid.cell_area()).sqrt();
        assert!(
            (hs - l2_of_lap).abs() < 1e-10 * l2_of_lap,
            "hs = {hs}, |lap|_2 = {l2_of_lap}"
        );
    }

    #[test]
    fn area_of_plateau() {
        // hard indicator: the exact equality case of Cauchy-Schwarz, so the
        // interaction area equals the pixelated disc area to round-off
        let grid = GridSpec::new(128, 16.0).unwrap();
        let f = ScalarField::from_fn(grid, |x, y| {
            let r = ((x - 8.0).powi(2) + (y - 8.0).powi(2)).sqrt();
            if r <= 3.0 {
                1.0
            } else {
                0.0
            }
        });
        let m0 = mass(&f);
        let (l2sq, _, _) = norms(&f, 2.0);
        let area = interaction_area(m0, l2sq);
        assert!((area - m0).abs() < 1e-12 * m0, "equality case");
        let disc = PI * 9.0;
        assert!(
            (area - disc).abs() < 0.02 * disc,
            "area = {area}, disc = {disc}"
        );
    }

    #[test]
    fn area_of_gaussian() {
        let grid = GridSpec::new(128, 16.0).unwrap();
        let sigma = 0.8;
        let f = gaussian(grid, 1.0, sigma, 8.0, 8.0);
        let m0 = mass(&f);
        let (l2sq, _, _) = norms(&f, 2.0);
        let area = interaction_area(m0, l2sq);
        let expected = 4.0 * PI * sigma * sigma;
        assert!((area - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn area_scale_invariant() {
        let grid = GridSpec::new(64, 8.0).unwrap();
        let f = gaussian(grid, 1.0, 0.6, 4.0, 4.0);
        let mut g = f.clone();
        g.scale(7.0);
        let a_f = interaction_area(mass(&f), norms(&f, 2.0).0);
        let a_g = interaction_area(mass(&g), norms(&g, 2.0).0);
        assert!((a_f - a_g).abs() < 1e-12 * a_f);
    }

    #[test]
    fn area_guards_underflow() {
        assert!(interaction_area(1.0, 0.0).is_infinite());
    }

    #[test]
    fn residual_with_zero_epsilon_is_mass_drift() {
        let mut series = TimeSeries::default();
        for i in 0..5 {
            series.push(DiagnosticsRecord {
                t: i as f64,
                m0: 1.0 - 0.01 * i as f64,
                m2: 0.0,
                l2sq: 1.0,
                linf: 1.0,
                hs: 0.0,
                min_val: 0.0,
                area: 1.0,
                balance_residual: 0.0,
                validity_flag: true,
            });
        }
        let res = balance_residual_series(&series, 0.0);
        for (i, r) in res.iter().enumerate() {
            assert!((r - 0.01 * i as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn residual_of_logistic_decay() {
        // Spatially uniform logistic decay on a unit box: m0 = rho(t),
        // l2sq = rho(t)^2, and the identity holds exactly in continuum.
        let eps = 0.8;
        let rho0 = 1.3;
        let mut series = TimeSeries::default();
        let steps = 20_000;
        let t_end = 2.0;
        for i in 0..=steps {
            let t = t_end * i as f64 / steps as f64;
            let rho = rho0 / (1.0 + eps * rho0 * t);
            series.records.push(DiagnosticsRecord {
                t,
                m0: rho,
                m2: 0.0,
                l2sq: rho * rho,
                linf: rho,
                hs: 0.0,
                min_val: rho,
                area: 1.0,
                balance_residual: 0.0,
                validity_flag: true,
            });
        }
        let res = balance_residual_series(&series, eps);
        let max = res.iter().fold(0.0f64, |a, &b| a.max(b));
        assert!(max < 1e-8, "max residual {max}");
    }

    #[test]
    fn csv_round_trip() {
        let rec = DiagnosticsRecord {
            t: 1.5,
            m0: 0.123456789,
            m2: 2.0,
            l2sq: 0.5,
            linf: 1.0,
            hs: 3.5,
            min_val: -1e-9,
            area: 0.25,
            balance_residual: 1e-7,
            validity_flag: true,
        };
        let mut series = TimeSeries::default();
        series.push(rec);
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let parsed = TimeSeries::read_csv(&buf[..]).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0], rec);
    }

    #[test]
    fn mass_fraction_time_interpolates() {
        let mut series = TimeSeries::default();
        for (t, m0) in [(0.0, 1.0), (1.0, 0.8), (2.0, 0.4)] {
            series.push(DiagnosticsRecord {
                t,
                m0,
                m2: 0.0,
                l2sq: 1.0,
                linf: 1.0,
                hs: 0.0,
                min_val: 0.0,
                area: 1.0,
                balance_residual: 0.0,
                validity_flag: true,
            });
        }
        let t_half = series.mass_fraction_time(0.5).unwrap();
        assert!((t_half - 1.75).abs() < 1e-12);
        assert!(series.mass_fraction_time(0.1).is_none());
    }
}
