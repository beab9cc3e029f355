//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Real`], which is
//! satisfied by `f32` and `f64`. Concrete type aliases live at the crate
//! root. Tolerances quoted in the documentation assume `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar type the library is generic over.
pub trait Real: RealField + FromPrimitive + ToPrimitive + Copy + Send + Sync {
    /// Machine epsilon of the concrete type.
    fn eps() -> Self;

    /// Conversion from an `f64` literal (constants, hyperparameters).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable in scalar type")
    }

    /// View as `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}
