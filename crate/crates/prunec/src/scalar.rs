//! Scalar abstraction for the numeric kernels.
//!
//! The interchange format pins weights to f32, but the kernel math and the
//! importance norms are written against this trait so they instantiate at
//! f32 or f64 unchanged.

use num_traits::Float;

pub trait Scalar: Float + std::fmt::Debug + Default + Send + Sync + 'static {
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}
