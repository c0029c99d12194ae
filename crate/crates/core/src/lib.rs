//! Dense non-rigid structure from motion with Grassmannian subspace models.
//!
//! The crate reconstructs per-point 3D structure of a deforming object from
//! orthographic 2D tracks. Two ADMM solvers are provided:
//!
//! * [`algo1`]: joint spatial and temporal Grassmannian self-expressiveness.
//! * [`algo2`]: spatial-only, geometry-aware variant that clusters subspaces
//!   after projecting them onto a low-dimensional Grassmann manifold.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases at the bottom of this file name the double-precision types used by
//! the command-line tool.

pub mod algo1;
pub mod algo2;
pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod io;
pub mod manifold;
pub mod numeric;
pub mod solver;

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::{FromPrimitive, ToPrimitive};

pub use error::{Error, Result};
pub use solver::{Diagnostics, IterationRecord, Snapshot};

/// Scalar field used throughout the crate.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal or configuration value.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Matrix<T> = DMatrix<T>;
pub type Vector<T> = DVector<T>;

pub type Matrix64 = DMatrix<f64>;
pub type MeasurementMatrix64 = data::MeasurementMatrix<f64>;
pub type RotationStack64 = data::RotationStack<f64>;
pub type ShapeMatrix64 = data::ShapeMatrix<f64>;
pub type ReshuffledShape64 = data::ReshuffledShape<f64>;
pub type GrassmannPoint64 = manifold::GrassmannPoint<f64>;
pub type GrassmannSet64 = manifold::GrassmannSet<f64>;
pub type SyntheticScene64 = experiments::SyntheticScene<f64>;

pub type MeasurementMatrix32 = data::MeasurementMatrix<f32>;
pub type ShapeMatrix32 = data::ShapeMatrix<f32>;

pub use data::OrderingVector;
