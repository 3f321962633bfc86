//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! kernels run at f32 or f64. The lab itself (configs, reports, CLI) is
//! pinned to f64 through the aliases at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by every kernel in this crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an f64 literal (configs and rng draws are f64).
    fn from_config(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 literal")
    }

    /// Widening conversion used when reporting metric values.
    fn to_report(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
