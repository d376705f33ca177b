//! Small descriptive statistics used across the pipeline.
//!
//! Standard deviations are population (1/n) throughout.

use crate::scalar::Real;

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::from_count(xs.len())
}

/// Population standard deviation.
pub fn pop_std<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_count(xs.len())).sqrt()
}

/// Standardizes `xs` to mean 0 and population std 1.
///
/// A constant (or effectively constant) input maps to all zeros.
pub fn standardize<T: Real>(xs: &[T]) -> Vec<T> {
    let m = mean(xs);
    let s = pop_std(xs);
    if !is_nonzero_spread(s, m) {
        return vec![T::zero(); xs.len()];
    }
    xs.iter().map(|&x| (x - m) / s).collect()
}

/// True when a spread `s` is distinguishable from rounding noise around `center`.
pub(crate) fn is_nonzero_spread<T: Real>(s: T, center: T) -> bool {
    let tol = T::epsilon() * T::lit(16.0) * center.abs().max(T::one());
    s > tol
}

/// Linear-interpolation quantile between order statistics ("type 7").
///
/// `sorted` must be ascending and non-empty; `q` in `[0, 1]`.
pub fn quantile_sorted<T: Real>(sorted: &[T], q: T) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = T::from_count(n - 1) * q;
    let lo = h.floor();
    let idx = lo.to_usize().unwrap_or(0).min(n - 1);
    if idx + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo;
    sorted[idx] + frac * (sorted[idx + 1] - sorted[idx])
}

/// Inter-quartile range of an unsorted sample.
pub fn iqr<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    quantile_sorted(&sorted, T::lit(0.75)) - quantile_sorted(&sorted, T::lit(0.25))
}
