//! Photoacoustic tomography reconstruction toolbox.
//!
//! The crate provides, for a 2D rectangular domain with a line sensor on the
//! top edge:
//!
//! - an accurate pseudo-spectral wave solver used as reference forward model
//!   and ground-truth simulator ([`wave`]),
//! - fast FFT-based approximate forward and inverse mappings between image
//!   and sensor-data space ([`fastops`]),
//! - classical variational solvers (proximal gradient, PDHG) ([`variational`]),
//! - a small reverse-mode autodiff engine with convolutional networks
//!   ([`autodiff`]),
//! - model-corrected learned primal-dual reconstruction, its deep-equilibrium
//!   variant with Anderson acceleration and implicit-differentiation training
//!   ([`learned`]),
//! - numerical diagnostics for the convergence theory and image-quality
//!   metrics ([`diagnostics`]),
//! - phantom generation, dataset simulation and plain-text configuration
//!   ([`phantom`], [`dataset`], [`config`]).

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod fastops;
pub mod field;
pub mod grid;
pub mod learned;
pub mod linop;
pub mod phantom;
pub mod tensor_file;
pub mod trace;
pub mod variational;
pub mod wave;

pub use error::{PatError, Result};
pub use field::{Image, SensorData};
pub use grid::{validate_grid, Grid};
pub use trace::FixedPointTrace;
