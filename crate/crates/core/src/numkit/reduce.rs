//! Deterministic reductions.
//!
//! Every sum in the crate goes through a fixed pairwise tree so results do
//! not depend on thread count or chunking.

use crate::scalar::Scalar;

const LEAF: usize = 16;

/// Pairwise-tree sum of `f(x)` over `xs`.
pub fn pairwise_sum_by<T: Scalar, F: Fn(T) -> T + Copy>(xs: &[T], f: F) -> T {
    if xs.len() <= LEAF {
        let mut acc = T::zero();
        for &x in xs {
            acc = acc + f(x);
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum_by(&xs[..mid], f) + pairwise_sum_by(&xs[mid..], f)
}

pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    pairwise_sum_by(xs, |x| x)
}

/// Pairwise-tree dot product.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    fn rec<T: Scalar>(a: &[T], b: &[T]) -> T {
        if a.len() <= LEAF {
            let mut acc = T::zero();
            for (&x, &y) in a.iter().zip(b) {
                acc = acc + x * y;
            }
            return acc;
        }
        let mid = a.len() / 2;
        rec(&a[..mid], &b[..mid]) + rec(&a[mid..], &b[mid..])
    }
    rec(a, b)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    pairwise_sum_by(a, |x| x * x).sqrt()
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    pairwise_sum(xs) / T::of(xs.len() as f64)
}

/// `‖a − b‖₂`.
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "distance: length mismatch");
    let diff: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    norm2(&diff)
}

/// Scales `a` to unit norm in place; returns the original norm.
pub fn normalize<T: Scalar>(a: &mut [T]) -> T {
    let n = norm2(a);
    if n > T::zero() {
        for x in a.iter_mut() {
            *x = *x / n;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn dot_and_norm() {
        let a = [3.0f64, 4.0];
        assert_eq!(norm2(&a), 5.0);
        assert_eq!(dot(&a, &[1.0, 1.0]), 7.0);
        let mut b = [0.0f64, 2.0];
        assert_eq!(normalize(&mut b), 2.0);
        assert_eq!(b, [0.0, 1.0]);
    }
}
