use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar element type of a [`Tensor`](super::Tensor).
///
/// Production code runs in `f32`; gradient checking instantiates the same
/// kernels with `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;
    /// Default central-difference step for gradient checks at this precision.
    const GRAD_CHECK_EPS: f64;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    const GRAD_CHECK_EPS: f64 = 1e-3;
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    const GRAD_CHECK_EPS: f64 = 1e-5;
}
