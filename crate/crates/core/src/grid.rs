//! Computational domain geometry and sampling.

use crate::error::{PatError, Result};

/// Rectangular 2D domain with a line sensor along the full top edge
/// (row 0 of an [`crate::Image`]), homogeneous sound speed and uniform
/// temporal sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Pixel count in depth (rows).
    pub nz: usize,
    /// Pixel count along the sensor (columns); also the detector count.
    pub nx: usize,
    /// Isotropic pixel size in meters.
    pub dx: f64,
    /// Sound speed in m/s.
    pub c: f64,
    /// Temporal sampling in seconds.
    pub dt: f64,
    /// Number of time samples.
    pub nt: usize,
}

impl Grid {
    pub fn new(nz: usize, nx: usize, dx: f64, c: f64, dt: f64, nt: usize) -> Result<Grid> {
        validate_grid(Grid {
            nz,
            nx,
            dx,
            c,
            dt,
            nt,
        })
    }

    /// The 80x128 line-sensor setup used throughout the experiments:
    /// dx = 106 um, c = 1500 m/s, dt = 50 ns, 160 time samples.
    pub fn standard() -> Grid {
        Grid {
            nz: 80,
            nx: 128,
            dx: 106e-6,
            c: 1500.0,
            dt: 50e-9,
            nt: 160,
        }
    }

    /// A smaller grid with the same physical sampling, nt = 2*nz by default.
    pub fn desk(nz: usize, nx: usize) -> Result<Grid> {
        Grid::new(nz, nx, 106e-6, 1500.0, 50e-9, 2 * nz)
    }

    /// Courant number c*dt/dx.
    pub fn cfl(&self) -> f64 {
        self.c * self.dt / self.dx
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }

    pub fn data_shape(&self) -> (usize, usize) {
        (self.nt, self.nx)
    }
}

/// Returns the grid unchanged iff every invariant holds; the error names the
/// offending field. Never panics.
pub fn validate_grid(g: Grid) -> Result<Grid> {
    fn dim(field: &'static str, v: usize) -> Result<()> {
        if v < 2 {
            Err(PatError::Grid {
                field,
                reason: format!("must be >= 2, got {v}"),
            })
        } else {
            Ok(())
        }
    }
    fn positive(field: &'static str, v: f64) -> Result<()> {
        if !(v.is_finite() && v > 0.0) {
            Err(PatError::Grid {
                field,
                reason: format!("must be finite and > 0, got {v}"),
            })
        } else {
            Ok(())
        }
    }
    dim("nz", g.nz)?;
    dim("nx", g.nx)?;
    dim("nt", g.nt)?;
    positive("dx", g.dx)?;
    positive("c", g.c)?;
    positive("dt", g.dt)?;
    let cfl = g.cfl();
    if cfl > 1.0 {
        return Err(PatError::Grid {
            field: "CFL",
            reason: format!("c*dt/dx = {cfl:.6} exceeds 1"),
        });
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_is_valid() {
        let g = Grid::new(80, 128, 106e-6, 1500.0, 50e-9, 160).unwrap();
        assert_eq!(g.image_shape(), (80, 128));
        assert_eq!(g.data_shape(), (160, 128));
        assert!(g.cfl() < 1.0);
    }

    #[test]
    fn degenerate_dimension_names_field() {
        let err = Grid::new(0, 128, 106e-6, 1500.0, 50e-9, 160).unwrap_err();
        match err {
            PatError::Grid { field, .. } => assert_eq!(field, "nz"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cfl_violation_names_cfl() {
        // c*dt/dx ~ 1415 >> 1
        let err = Grid::new(80, 128, 106e-6, 1500.0, 1e-4, 160).unwrap_err();
        match err {
            PatError::Grid { field, .. } => assert_eq!(field, "CFL"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validation_is_total_on_garbage() {
        // Any combination of garbage returns a value or an error, never panics.
        for &dx in &[f64::NAN, f64::INFINITY, -1.0, 0.0, 1e-6] {
            for &dt in &[f64::NAN, -2.0, 1e-9] {
                let _ = Grid::new(3, 3, dx, 1500.0, dt, 4);
            }
        }
    }
}
