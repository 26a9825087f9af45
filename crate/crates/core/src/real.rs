//! Scalar abstraction so the rasterizer can run in single or double precision.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;

pub trait Real:
    Float + Default + Debug + AddAssign + MulAssign + Send + Sync + 'static
{
    fn lit(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
