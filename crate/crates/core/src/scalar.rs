//! Scalar abstractions.
//!
//! Counting and bookkeeping code (sampling tables, leakage sums, enumeration)
//! only needs field arithmetic and is written against [`Field`], so it also
//! runs over exact rationals. Anything that takes square roots or factors a
//! matrix needs [`Real`].

use std::fmt::Debug;

use nalgebra::RealField;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Ordered field arithmetic with lossy conversion to and from `f64`.
pub trait Field:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// any approximation of a finite value.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn magnitude(self) -> Self {
        if self < Self::zero() {
            Self::zero() - self
        } else {
            self
        }
    }

    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl<T> Field for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Floating-point scalar usable by the least-squares and estimation code.
pub trait Real: Field + RealField + Copy + Default + serde::Serialize {}

impl<T> Real for T where T: Field + RealField + Copy + Default + serde::Serialize {}
