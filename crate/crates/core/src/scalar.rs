//! Scalar abstraction for the numeric kernels.
//!
//! All attention, scoring and loss math is generic over [`Real`] so the same
//! code runs in `f32` or `f64`. The pipeline and file formats use the
//! concrete aliases exported from the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar (`f32` or `f64`) the numeric kernels accept.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant into the scalar type.
    fn from_f(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant converts to scalar type")
    }

    /// Widens the scalar back to `f64`.
    fn to_f(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_f64() {
        assert_eq!(f32::from_f(0.5).to_f(), 0.5);
        assert_eq!(f64::from_f(0.1), 0.1);
    }
}
