//! Periodic-box grids, Fourier transforms and the spectral operators
//! (gradient, divergence, Laplacian, inverse Laplacian, dealiasing).
//!
//! All fields live on an `n x n` uniform grid over `[0, L)^2` with periodic
//! boundary conditions. Transform normalization is fixed once: the forward
//! transform is unnormalized, the inverse divides by `n^2`. Wavenumbers are
//! `k = 2*pi*j/L` with `j` in `-n/2 .. n/2-1` per axis. First derivatives
//! zero the Nyquist mode so that derivatives of real fields stay real and
//! antisymmetric; the Laplacian keeps it (real multiplier).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SimError};

/// Spectral coefficients of a scalar field (unnormalized forward transform).
pub type Spectrum = Array2<Complex64>;

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Uniform periodic grid: `n` points per side (power of two, n >= 16) on a
/// box of side `length`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    n: usize,
    length: f64,
}

impl GridSpec {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(SimError::Config(format!(
                "grid size must be a power of two >= 16, got {n}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(SimError::Config(format!(
                "box length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n, length })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Grid spacing h = L/n.
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Cell area h^2, the quadrature weight of every sample.
    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// Coordinate of sample `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Signed integer frequency of row/column `i` (fft ordering).
    fn freq_index(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i <= n / 2 - 1 {
            i
        } else {
            i - n
        }
    }

    /// Wavenumber of row/column `i`: 2*pi*j/L.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.freq_index(i) as f64 / self.length
    }

    /// Largest retained frequency index under the 2/3 dealiasing rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n as i64) / 3
    }
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Real scalar samples on a periodic grid. Index `[i, j]` is the point
/// `(i*h, j*h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: Array2::zeros((grid.n, grid.n)),
        }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            values: Array2::from_elem((grid.n, grid.n), value),
        }
    }

    /// Sample `f(x, y)` at every grid point.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n;
        let values = Array2::from_shape_fn((n, n), |(i, j)| f(grid.coord(i), grid.coord(j)));
        Self { grid, values }
    }

    pub fn from_values(grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n, grid.n) {
            return Err(SimError::Config(format!(
                "field shape {:?} does not match grid n = {}",
                values.dim(),
                grid.n
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Spatial mean over the box.
    pub fn mean(&self) -> f64 {
        self.values.sum() / (self.grid.n * self.grid.n) as f64
    }

    /// `self + scale * other`, in place.
    pub fn add_scaled(&mut self, other: &ScalarField, scale: f64) {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values.zip_mut_with(&other.values, |a, &b| {
            *a += scale * b;
        });
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.mapv_inplace(|v| v * factor);
    }
}

/// A two-component vector field; both components share one grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Self {
        assert_eq!(x.grid(), y.grid(), "vector components on different grids");
        Self { x, y }
    }

    pub fn grid(&self) -> GridSpec {
        self.x.grid()
    }

    /// Pointwise maximum of |v|.
    pub fn max_speed(&self) -> f64 {
        self.x
            .values()
            .iter()
            .zip(self.y.values().iter())
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans_for(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// 2D FFT over both axes of a complex array, in place.
fn fft2_inplace(data: &mut Array2<Complex64>, forward: bool) {
    let n = data.nrows();
    let plans = plans_for(n);
    let fft = if forward {
        &plans.forward
    } else {
        &plans.inverse
    };
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    // Axis 1 (contiguous rows).
    for mut row in data.rows_mut() {
        let slice = row.as_slice_mut().expect("row not contiguous");
        fft.process_with_scratch(slice, &mut scratch);
    }
    // Axis 0 via a column buffer.
    let mut col = vec![Complex64::default(); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[[i, j]];
        }
        fft.process_with_scratch(&mut col, &mut scratch);
        for i in 0..n {
            data[[i, j]] = col[i];
        }
    }
}

/// Forward transform (unnormalized).
pub fn forward(field: &ScalarField) -> Spectrum {
    let mut data = field.values.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut data, true);
    data
}

/// Inverse transform; divides by n^2 and drops the (machine-level) imaginary
/// residue.
pub fn inverse(spec: &Spectrum, grid: GridSpec) -> ScalarField {
    let mut data = spec.clone();
    fft2_inplace(&mut data, false);
    let norm = 1.0 / (grid.n * grid.n) as f64;
    ScalarField {
        grid,
        values: data.mapv(|c| c.re * norm),
    }
}

fn inverse_into(mut data: Spectrum, grid: GridSpec) -> ScalarField {
    fft2_inplace(&mut data, false);
    let norm = 1.0 / (grid.n * grid.n) as f64;
    ScalarField {
        grid,
        values: data.mapv(|c| c.re * norm),
    }
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Derivative multiplier along one axis: i*k, with the Nyquist mode zeroed.
fn derivative_factor(grid: &GridSpec, i: usize) -> Complex64 {
    let j = grid.freq_index(i);
    if j == -(grid.n as i64) / 2 {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::new(0.0, 2.0 * std::f64::consts::PI * j as f64 / grid.length)
    }
}

/// Spectral gradient of a scalar field.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid;
    let spec = forward(f);
    let n = grid.n;
    let mut gx = spec.clone();
    let mut gy = spec;
    for i in 0..n {
        let di = derivative_factor(&grid, i);
        for j in 0..n {
            let dj = derivative_factor(&grid, j);
            gx[[i, j]] *= di;
            gy[[i, j]] *= dj;
        }
    }
    VectorField::new(inverse_into(gx, grid), inverse_into(gy, grid))
}

/// Spectral divergence of a vector field. The result has zero spatial mean
/// by construction (the k = 0 mode of a derivative vanishes).
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let sx = forward(&v.x);
    let sy = forward(&v.y);
    let n = grid.n;
    let mut out = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        let di = derivative_factor(&grid, i);
        for j in 0..n {
            let dj = derivative_factor(&grid, j);
            out[[i, j]] = di * sx[[i, j]] + dj * sy[[i, j]];
        }
    }
    inverse_into(out, grid)
}

/// Spectral Laplacian.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid;
    let mut spec = forward(f);
    let n = grid.n;
    for i in 0..n {
        let ki = grid.wavenumber(i);
        for j in 0..n {
            let kj = grid.wavenumber(j);
            spec[[i, j]] *= -(ki * ki + kj * kj);
        }
    }
    inverse_into(spec, grid)
}

/// Solve `laplacian(g) = f - mean(f)` with `mean(g) = 0`: on every mode
/// k != 0 the coefficient is `-f_hat(k)/|k|^2`, and the k = 0 mode is
/// dropped. On the torus this is the unique total extension of the inverse
/// Laplacian; only its gradient enters the dynamics, so the constant shift
/// is immaterial.
pub fn inverse_laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid;
    let mut spec = forward(f);
    apply_inverse_laplacian(&mut spec, &grid);
    inverse_into(spec, grid)
}

/// In-place spectral form of [`inverse_laplacian`].
pub(crate) fn apply_inverse_laplacian(spec: &mut Spectrum, grid: &GridSpec) {
    let n = grid.n;
    for i in 0..n {
        let ki = grid.wavenumber(i);
        for j in 0..n {
            if i == 0 && j == 0 {
                spec[[0, 0]] = Complex64::new(0.0, 0.0);
                continue;
            }
            let kj = grid.wavenumber(j);
            spec[[i, j]] /= -(ki * ki + kj * kj);
        }
    }
}

/// Zero every mode with `max(|jx|, |jy|)` above the 2/3-rule cutoff.
/// Idempotent; quadratic products of dealiased fields alias only onto
/// modes that the next application removes.
pub fn dealias(f: &ScalarField) -> ScalarField {
    let grid = f.grid;
    let mut spec = forward(f);
    apply_dealias(&mut spec, &grid);
    inverse_into(spec, grid)
}

/// In-place spectral form of [`dealias`].
pub(crate) fn apply_dealias(spec: &mut Spectrum, grid: &GridSpec) {
    let cutoff = grid.dealias_cutoff();
    let n = grid.n;
    for i in 0..n {
        let ji = grid.freq_index(i).abs();
        for j in 0..n {
            let jj = grid.freq_index(j).abs();
            if ji > cutoff || jj > cutoff {
                spec[[i, j]] = Complex64::new(0.0, 0.0);
            }
        }
    }
}
