//! Scalar abstraction for the linear-algebra parts of the crate.
//!
//! Chains, traces and covariance estimators are generic over [`Real`], which
//! is satisfied by `f32` and `f64`. Samplers and quasi-Monte Carlo code work
//! in `f64` only.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {}
