// Float functions that live in std but not in core.

use num_traits::Float;

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    Float::sqrt(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    Float::round(x)
}
