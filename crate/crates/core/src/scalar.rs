//! Floating-point scalar abstraction for the numeric kernels.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: f32 or f64. Pixel data stays `u8` throughout the
/// pipeline; this trait only covers derived quantities (filter kernels,
/// similarity scores, thresholds).
pub trait Real: Float + FromPrimitive + core::fmt::Debug + Send + Sync + 'static {
    fn cast_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 converts to Real")
    }
    fn cast_usize(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize converts to Real")
    }
    fn cast_u8(v: u8) -> Self {
        <Self as FromPrimitive>::from_u8(v).expect("u8 converts to Real")
    }
}

impl Real for f32 {}
impl Real for f64 {}
