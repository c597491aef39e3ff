//! Reference forward model: pseudo-spectral k-space time stepping of the
//! acoustic initial value problem on a padded, damped domain.
//!
//! The scheme is a second-order leapfrog whose Laplacian symbol carries the
//! exact k-space correction sinc(c|k|dt/2), i.e. the per-mode update
//! multiplier is 2cos(c|k|dt) - 2, which propagates each Fourier mode of the
//! homogeneous wave equation exactly. Boundaries are handled by padding each
//! side by nz/2 pixels and applying a cosine-tapered exponential damping ramp
//! (floor 0.90 per step at the outermost pixel) instead of a PML.
//!
//! The adjoint is the exact discrete transpose of the time-stepping pipeline
//! (the recorded linear steps applied in reverse), not a time-reversal
//! heuristic, so inner-product identities hold to solver precision.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{PatError, Result};
use crate::field::{Image, SensorData};
use crate::grid::{validate_grid, Grid};
use crate::linop::FieldOp;

pub use crate::linop::{assemble_dense, DenseMatrix, DenseOp};

/// Padded wave field pair carried between leapfrog steps.
#[derive(Debug, Clone)]
pub struct WaveState {
    /// Current pressure field on the padded grid (Pa).
    pub pressure: Array2<f64>,
    /// Previous-step pressure field.
    pub previous: Array2<f64>,
    /// Padded grid dimensions (rows, cols).
    pub padded: (usize, usize),
    /// Per-pixel damping factors in (0, 1].
    pub damping: Array2<f64>,
}

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Fft2 {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    /// Unnormalized forward 2D FFT, in place.
    fn forward(&self, buf: &mut Array2<Complex64>) {
        for mut row in buf.rows_mut() {
            self.row_fwd.process(row.as_slice_mut().expect("contiguous row"));
        }
        let mut col = vec![Complex64::default(); self.rows];
        for j in 0..self.cols {
            for i in 0..self.rows {
                col[i] = buf[[i, j]];
            }
            self.col_fwd.process(&mut col);
            for i in 0..self.rows {
                buf[[i, j]] = col[i];
            }
        }
    }

    /// Unnormalized inverse 2D FFT, in place (caller scales by 1/(rows*cols)).
    fn inverse(&self, buf: &mut Array2<Complex64>) {
        for mut row in buf.rows_mut() {
            self.row_inv.process(row.as_slice_mut().expect("contiguous row"));
        }
        let mut col = vec![Complex64::default(); self.rows];
        for j in 0..self.cols {
            for i in 0..self.rows {
                col[i] = buf[[i, j]];
            }
            self.col_inv.process(&mut col);
            for i in 0..self.rows {
                buf[[i, j]] = col[i];
            }
        }
    }
}

/// DFT wavenumbers for n samples of spacing d, in rad/m, standard wrapped
/// order (0, positive, negative).
pub fn dft_wavenumbers(n: usize, d: f64) -> Vec<f64> {
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * d);
    (0..n)
        .map(|i| {
            let f = if i <= (n - 1) / 2 {
                i as f64
            } else {
                i as f64 - n as f64
            };
            f * dk
        })
        .collect()
}

struct Stepper {
    grid: Grid,
    pad: usize,
    rows: usize,
    cols: usize,
    /// Per-mode update multiplier 2cos(c|k|dt) - 2.
    propagator: Array2<f64>,
    damping: Array2<f64>,
    fft: Fft2,
}

impl Stepper {
    fn new(grid: &Grid) -> Stepper {
        let pad = (grid.nz / 2).max(1);
        let rows = grid.nz + 2 * pad;
        let cols = grid.nx + 2 * pad;
        let kz = dft_wavenumbers(rows, grid.dx);
        let kx = dft_wavenumbers(cols, grid.dx);
        let propagator = Array2::from_shape_fn((rows, cols), |(i, j)| {
            let k = (kz[i] * kz[i] + kx[j] * kx[j]).sqrt();
            2.0 * (grid.c * k * grid.dt).cos() - 2.0
        });
        let damping = Array2::from_shape_fn((rows, cols), |(i, j)| {
            let t = i.min(rows - 1 - i).min(j).min(cols - 1 - j);
            if t >= pad {
                1.0
            } else {
                // Cosine taper from 1 at the pad's inner edge down to the
                // 0.90 floor at the outermost pixel.
                let s = t as f64 / pad as f64;
                1.0 - 0.10 * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
            }
        });
        Stepper {
            grid: *grid,
            pad,
            rows,
            cols,
            propagator,
            damping,
            fft: Fft2::new(rows, cols),
        }
    }

    fn laplacian_term(&self, field: &Array2<f64>) -> Array2<f64> {
        let mut buf = field.mapv(|v| Complex64::new(v, 0.0));
        self.fft.forward(&mut buf);
        buf.zip_mut_with(&self.propagator, |c, &p| *c *= p);
        self.fft.inverse(&mut buf);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        buf.mapv(|c| c.re * scale)
    }

    /// One leapfrog step: damp both history slots, then advance.
    fn step(&self, current: &Array2<f64>, previous: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let damped_cur = current * &self.damping;
        let damped_prev = previous * &self.damping;
        let lap = self.laplacian_term(&damped_cur);
        let next = 2.0 * &damped_cur - &damped_prev + &lap;
        (next, damped_cur)
    }

    /// Exact transpose of [`step`](Self::step) as a linear map on the pair.
    fn step_transpose(&self, u: &Array2<f64>, v: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        // Forward block matrix [[ (2I+L)D, -D ], [ D, 0 ]]; D and L are
        // symmetric, so the transpose is [[ D(2I+L), D ], [ -D, 0 ]].
        let lap_u = self.laplacian_term(u);
        let s = 2.0 * u + &lap_u + v;
        let t = -u;
        (&s * &self.damping, &t * &self.damping)
    }

    fn embed(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut padded = Array2::zeros((self.rows, self.cols));
        padded
            .slice_mut(ndarray::s![
                self.pad..self.pad + self.grid.nz,
                self.pad..self.pad + self.grid.nx
            ])
            .assign(x);
        padded
    }

    fn crop(&self, padded: &Array2<f64>) -> Array2<f64> {
        padded
            .slice(ndarray::s![
                self.pad..self.pad + self.grid.nz,
                self.pad..self.pad + self.grid.nx
            ])
            .to_owned()
    }

    /// Samples the sensor row (physical row 0).
    fn sample(&self, padded: &Array2<f64>) -> Vec<f64> {
        (0..self.grid.nx)
            .map(|j| padded[[self.pad, self.pad + j]])
            .collect()
    }

    /// Transpose of [`sample`](Self::sample): injects a sensor row.
    fn inject(&self, padded: &mut Array2<f64>, row: &[f64]) {
        for (j, &v) in row.iter().enumerate() {
            padded[[self.pad, self.pad + j]] += v;
        }
    }
}

fn forward_raw(stepper: &Stepper, x: &Array2<f64>) -> Array2<f64> {
    let g = &stepper.grid;
    // Zero initial time derivative: both leapfrog history slots start at x.
    let mut current = stepper.embed(x);
    let mut previous = current.clone();
    let mut y = Array2::zeros((g.nt, g.nx));
    for (j, v) in stepper.sample(&current).into_iter().enumerate() {
        y[[0, j]] = v;
    }
    for k in 1..g.nt {
        let (next, cur) = stepper.step(&current, &previous);
        current = next;
        previous = cur;
        for (j, v) in stepper.sample(&current).into_iter().enumerate() {
            y[[k, j]] = v;
        }
    }
    y
}

fn adjoint_raw(stepper: &Stepper, y: &Array2<f64>) -> Array2<f64> {
    let g = &stepper.grid;
    let mut u = Array2::zeros((stepper.rows, stepper.cols));
    let mut v = Array2::zeros((stepper.rows, stepper.cols));
    for k in (1..g.nt).rev() {
        let row: Vec<f64> = (0..g.nx).map(|j| y[[k, j]]).collect();
        stepper.inject(&mut u, &row);
        let (nu, nv) = stepper.step_transpose(&u, &v);
        u = nu;
        v = nv;
    }
    let row: Vec<f64> = (0..g.nx).map(|j| y[[0, j]]).collect();
    stepper.inject(&mut u, &row);
    // x fed both initial slots, so the transpose sums their cotangents.
    stepper.crop(&(&u + &v))
}

/// Simulates sensor data y = M p at times k*dt, k = 0..nt-1, for initial
/// pressure `x`. Linear in `x` and deterministic.
pub fn simulate_forward(x: &Image, g: &Grid) -> Result<SensorData> {
    let g = validate_grid(*g)?;
    if x.grid() != &g {
        return Err(PatError::shape(
            "simulate_forward",
            format!("{:?}", g.image_shape()),
            format!("{:?}", x.grid().image_shape()),
        ));
    }
    let stepper = Stepper::new(&g);
    let y = forward_raw(&stepper, x.values());
    SensorData::new(y, &g)
}

/// Exact discrete transpose of [`simulate_forward`].
pub fn adjoint_forward(y: &SensorData, g: &Grid) -> Result<Image> {
    let g = validate_grid(*g)?;
    if y.grid() != &g {
        return Err(PatError::shape(
            "adjoint_forward",
            format!("{:?}", g.data_shape()),
            format!("{:?}", y.grid().data_shape()),
        ));
    }
    let stepper = Stepper::new(&g);
    let x = adjoint_raw(&stepper, y.values());
    Image::new(x, &g)
}

/// The reference forward model as a [`FieldOp`]; builds its stepper once.
pub struct ReferenceForwardOp {
    grid: Grid,
    stepper: Stepper,
}

impl ReferenceForwardOp {
    pub fn new(grid: &Grid) -> Result<ReferenceForwardOp> {
        let grid = validate_grid(*grid)?;
        Ok(ReferenceForwardOp {
            grid,
            stepper: Stepper::new(&grid),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

impl FieldOp for ReferenceForwardOp {
    fn domain_shape(&self) -> (usize, usize) {
        self.grid.image_shape()
    }
    fn range_shape(&self) -> (usize, usize) {
        self.grid.data_shape()
    }
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        forward_raw(&self.stepper, x)
    }
    fn apply_transpose(&self, y: &Array2<f64>) -> Array2<f64> {
        adjoint_raw(&self.stepper, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::inner;

    fn small_grid() -> Grid {
        Grid::new(8, 8, 106e-6, 1500.0, 50e-9, 16).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let g = small_grid();
        let y = simulate_forward(&Image::zeros(&g), &g).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_source_arrival_time_matches_time_of_flight() {
        let g = Grid::standard();
        let depth_px = 20usize;
        let mut x = Array2::zeros(g.image_shape());
        x[[depth_px, g.nx / 2]] = 1.0;
        let y = simulate_forward(&Image::new(x, &g).unwrap(), &g).unwrap();
        // Nearest sensor is directly above the source.
        let col = y.values().column(g.nx / 2);
        let (k_peak, _) = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        let d = depth_px as f64 * g.dx;
        let expected = (d / (g.c * g.dt)).round() as i64;
        assert!(
            (k_peak as i64 - expected).abs() <= 2,
            "peak at {k_peak}, expected {expected} +- 2"
        );
    }

    #[test]
    fn linearity_superposition() {
        use rand::{Rng, SeedableRng};
        let g = small_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x1 = Array2::from_shape_fn(g.image_shape(), |_| rng.gen::<f64>() - 0.5);
        let x2 = Array2::from_shape_fn(g.image_shape(), |_| rng.gen::<f64>() - 0.5);
        let (a, b) = (1.7, -0.6);
        let img = |v: &Array2<f64>| Image::new(v.clone(), &g).unwrap();
        let y1 = simulate_forward(&img(&x1), &g).unwrap();
        let y2 = simulate_forward(&img(&x2), &g).unwrap();
        let combined = simulate_forward(&img(&(a * &x1 + b * &x2)), &g).unwrap();
        let expected = a * y1.values() + b * y2.values();
        let num = (&expected - combined.values()).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(num / den < 1e-10, "relative deviation {}", num / den);
    }

    #[test]
    fn adjoint_inner_product_identity() {
        use rand::{Rng, SeedableRng};
        let g = small_grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn(g.image_shape(), |_| rng.gen::<f64>() - 0.5);
        let h = Array2::from_shape_fn(g.data_shape(), |_| rng.gen::<f64>() - 0.5);
        let ax = simulate_forward(&Image::new(x.clone(), &g).unwrap(), &g).unwrap();
        let ath = adjoint_forward(&SensorData::new(h.clone(), &g).unwrap(), &g).unwrap();
        let lhs = inner(ax.values(), &h);
        let rhs = inner(&x, ath.values());
        assert!(
            (lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1e-30),
            "lhs {lhs} rhs {rhs}"
        );
    }

    #[test]
    fn causality_no_signal_before_time_of_flight() {
        let g = Grid::new(32, 16, 106e-6, 1500.0, 50e-9, 64).unwrap();
        let depth_px = 24usize;
        let mut x = Array2::zeros(g.image_shape());
        for j in 4..12 {
            x[[depth_px, j]] = 1.0;
        }
        let y = simulate_forward(&Image::new(x, &g).unwrap(), &g).unwrap();
        let peak = y.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = depth_px as f64 * g.dx;
        let k_front = (0.8 * d / (g.c * g.dt)).floor() as usize;
        for k in 0..k_front {
            for j in 0..g.nx {
                assert!(
                    y.values()[[k, j]].abs() <= 1e-12 * peak,
                    "acausal signal at t index {k}"
                );
            }
        }
    }
}
