//! Field tensors: initial pressure images and sensor time series.
//!
//! Both types are immutable after construction and cheap to clone; all
//! mutation happens by constructing new values. Construction checks shape
//! against the grid and rejects non-finite entries.

use ndarray::Array2;

use crate::error::{PatError, Result};
use crate::grid::Grid;

fn check_finite(values: &Array2<f64>, context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PatError::NonFinite(context.to_string()))
    }
}

/// Initial pressure distribution (Pa) on the nz x nx image grid.
/// Row 0 is the sensor edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    values: Array2<f64>,
    grid: Grid,
}

impl Image {
    pub fn new(values: Array2<f64>, grid: &Grid) -> Result<Image> {
        if values.dim() != grid.image_shape() {
            return Err(PatError::shape(
                "Image",
                format!("{:?}", grid.image_shape()),
                format!("{:?}", values.dim()),
            ));
        }
        check_finite(&values, "Image")?;
        Ok(Image {
            values,
            grid: *grid,
        })
    }

    pub fn zeros(grid: &Grid) -> Image {
        Image {
            values: Array2::zeros(grid.image_shape()),
            grid: *grid,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Pressure time series (Pa) at the nx top-edge detectors, nt x nx.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorData {
    values: Array2<f64>,
    grid: Grid,
}

impl SensorData {
    pub fn new(values: Array2<f64>, grid: &Grid) -> Result<SensorData> {
        if values.dim() != grid.data_shape() {
            return Err(PatError::shape(
                "SensorData",
                format!("{:?}", grid.data_shape()),
                format!("{:?}", values.dim()),
            ));
        }
        check_finite(&values, "SensorData")?;
        Ok(SensorData {
            values,
            grid: *grid,
        })
    }

    pub fn zeros(grid: &Grid) -> SensorData {
        SensorData {
            values: Array2::zeros(grid.data_shape()),
            grid: *grid,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Plain sum of pointwise products, no grid-measure weights.
pub fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_wrong_shape_and_nan() {
        let g = Grid::new(4, 6, 1e-4, 1500.0, 5e-8, 8).unwrap();
        assert!(Image::new(Array2::zeros((4, 5)), &g).is_err());
        let mut bad = Array2::zeros((4, 6));
        bad[[1, 2]] = f64::NAN;
        assert!(Image::new(bad, &g).is_err());
        assert!(Image::new(Array2::zeros((4, 6)), &g).is_ok());
    }

    #[test]
    fn sensor_data_shape_is_nt_by_nx() {
        let g = Grid::new(4, 6, 1e-4, 1500.0, 5e-8, 8).unwrap();
        assert!(SensorData::new(Array2::zeros((8, 6)), &g).is_ok());
        assert!(SensorData::new(Array2::zeros((4, 6)), &g).is_err());
    }
}
