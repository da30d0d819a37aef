use std::fmt::Debug;

/// Scalar storage type for tensors.
///
/// Storage is normally `f32`; `f64` instantiations exist so that finite
/// difference checks can run without single-precision cancellation noise.
/// Reductions in every kernel accumulate in `f64` regardless of `T`.
pub trait Element:
    Copy + Default + Debug + PartialEq + PartialOrd + Send + Sync + rustfft::FftNum + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    fn is_finite(self) -> bool {
        self.f64().is_finite()
    }
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}
