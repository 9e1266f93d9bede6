//! Scalar abstraction for payoffs.
//!
//! Payoff arithmetic only needs a field with a total-enough order, so every
//! utility-bearing type is generic over [`Scalar`]. `f64`, `f32` and exact
//! rationals all qualify.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Numeric type usable for utilities.
pub trait Scalar:
    Num + PartialOrd + Copy + Debug + Send + Sync + FromPrimitive + Serialize + DeserializeOwned + 'static
{
    /// Lift a small integer literal into the scalar type.
    fn lit(v: i64) -> Self {
        Self::from_i64(v).expect("integer literal representable in scalar type")
    }

    /// Larger of two values. Incomparable pairs (NaN) yield `self`.
    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl<T> Scalar for T where
    T: Num + PartialOrd + Copy + Debug + Send + Sync + FromPrimitive + Serialize + DeserializeOwned + 'static
{
}
