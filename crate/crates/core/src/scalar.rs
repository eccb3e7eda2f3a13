//! Floating-point abstraction shared by every numeric routine in the crate.
//!
//! Training runs in `f32`; gradient checks and reference computations run in
//! `f64`. Everything that touches tensors is written once against [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only for values that cannot be
    /// represented at all, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn as_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).unwrap_or(f32::NAN)
    }

    fn type_name() -> &'static str;
}

impl Scalar for f32 {
    fn type_name() -> &'static str {
        "f32"
    }
}

impl Scalar for f64 {
    fn type_name() -> &'static str {
        "f64"
    }
}

/// Which scalar instantiation a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}
