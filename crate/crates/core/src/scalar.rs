use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::NumCast;

/// Scalar type the filter can be built over.
pub trait Real: RealField + Copy + NumCast + Debug + Display + LowerExp + Send + Sync + 'static {
    /// Relative singular-value threshold for rank decisions.
    const RANK_RTOL: f64;

    fn c(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 literal representable")
    }

    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const RANK_RTOL: f64 = 1e-8;
}

impl Real for f32 {
    const RANK_RTOL: f64 = 1e-4;
}
