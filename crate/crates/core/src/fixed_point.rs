//! Ascending fixed-point iteration over integer time.

use num_traits::PrimInt;

/// Least fixed point of a monotone `step`, iterating upward from `start`.
///
/// `start` must not exceed the least fixed point. Returns `None` as soon as an
/// iterate exceeds `limit`.
pub fn least_fixed_point<T, F>(start: T, limit: T, mut step: F) -> Option<T>
where
    T: PrimInt,
    F: FnMut(T) -> T,
{
    let mut current = start;
    if current > limit {
        return None;
    }
    loop {
        let next = step(current);
        if next > limit {
            return None;
        }
        if next <= current {
            debug_assert!(next == current, "step is not monotone from below");
            return Some(current);
        }
        current = next;
    }
}

/// `⌈numerator / denominator⌉` for non-negative integers.
pub fn div_ceil<T: PrimInt>(numerator: T, denominator: T) -> T {
    let q = numerator / denominator;
    if q * denominator == numerator {
        q
    } else {
        q + T::one()
    }
}
