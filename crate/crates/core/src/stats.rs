//! Small descriptive statistics used across modules.

use crate::scalar::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Sample variance with the `n - 1` denominator; 0 for fewer than two values.
pub fn variance<T: Scalar>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::from_usize_lossy(xs.len() - 1)
}

pub fn weighted_mean<T: Scalar>(xs: &[T], w: &[T]) -> T {
    let sw: T = w.iter().copied().sum();
    xs.iter().zip(w).map(|(&x, &wi)| x * wi).sum::<T>() / sw
}

/// Frequency-weight variance: `sum w (x - m)^2 / (sum w - 1)`.
///
/// Falls back to the `sum w` denominator when the total weight is at most one.
pub fn weighted_variance<T: Scalar>(xs: &[T], w: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let sw: T = w.iter().copied().sum();
    let m = weighted_mean(xs, w);
    let ss: T = xs.iter().zip(w).map(|(&x, &wi)| wi * (x - m) * (x - m)).sum();
    let denom = if sw > T::one() { sw - T::one() } else { sw };
    ss / denom
}

/// Quantile of an ascending-sorted slice by linear interpolation between
/// order statistics (`h = (n - 1) q`).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let n = sorted.len();
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = T::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted_copy<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sort"));
    v
}

pub fn median<T: Scalar>(xs: &[T]) -> T {
    quantile_sorted(&sorted_copy(xs), 0.5)
}

/// Pearson correlation. Returns 0 when either input is constant.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> T {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return T::zero();
    }
    sxy / (sxx * syy).sqrt()
}

/// Ranks starting at 1, ties receive the average of their positions.
pub fn average_ranks<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("NaN in ranks"));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = T::lit((i + j) as f64 / 2.0 + 1.0);
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> T {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v: Vec<f64> = (1..=100).map(|i| 0.01 * i as f64).collect();
        let q = quantile_sorted(&v, 0.05);
        assert!((q - 0.0595).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 0.0), 0.01);
        assert_eq!(quantile_sorted(&v, 1.0), 1.0);
        assert_eq!(median(&[3.0, 1.0, 2.0, 4.0]), 2.5);
    }

    #[test]
    fn weighted_moments_reduce_to_unweighted() {
        let x = [1.0f64, 2.0, 4.0, 7.0];
        let w = [1.0; 4];
        assert!((weighted_mean(&x, &w) - mean(&x)).abs() < 1e-15);
        assert!((weighted_variance(&x, &w) - variance(&x)).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_and_reversal() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let y = [40.0, 30.0, 20.0, 10.0];
        assert!((spearman(&x, &y) + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[5.0, 5.0, 1.0]), vec![2.5, 2.5, 1.0]);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), 0.0);
    }
}
