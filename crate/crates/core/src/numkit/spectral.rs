//! Power iteration for the largest singular value of an explicit matrix or
//! of any operator that can apply itself and its adjoint.

use super::matrix::Matrix;
use super::reduce::{norm2, normalize};
use super::rng::{RngState, Substream};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A linear map `ℝ^cols → ℝ^rows` known only through its action.
pub trait LinearOperator<T: Scalar> {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[T]) -> Vec<T>;
    fn apply_adjoint(&self, y: &[T]) -> Vec<T>;
}

impl<T: Scalar> LinearOperator<T> for Matrix<T> {
    fn rows(&self) -> usize {
        Matrix::rows(self)
    }
    fn cols(&self) -> usize {
        Matrix::cols(self)
    }
    fn apply(&self, x: &[T]) -> Vec<T> {
        self.matvec(x)
    }
    fn apply_adjoint(&self, y: &[T]) -> Vec<T> {
        self.matvec_t(y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate<T> {
    /// `‖A v‖₂` for the best unit vector found; never above the true norm
    /// beyond rounding.
    pub value: T,
    pub converged: bool,
    pub iterations: usize,
}

/// Number of randomized restarts after the deterministic all-ones start.
pub const RESTARTS: u64 = 2;

const RESTART_SEED: RngState = RngState::new(0x5eed_5eed, 0);

/// Largest singular value of `a` by power iteration on `AᵀA`.
pub fn spectral_norm<T: Scalar>(a: &Matrix<T>, iters: usize, tol: T) -> Result<SpectralEstimate<T>> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::EmptyShape {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NumericDomain("spectral_norm: non-finite matrix entry".into()));
    }
    operator_norm(a, iters, tol)
}

/// Largest singular value of a matrix-free operator.
///
/// Runs from the normalized all-ones vector and from [`RESTARTS`] Gaussian
/// starts drawn from a fixed stream, returning the largest estimate.
pub fn operator_norm<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    iters: usize,
    tol: T,
) -> Result<SpectralEstimate<T>> {
    if iters == 0 {
        return Err(Error::Precondition("power iteration needs iters >= 1".into()));
    }
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return Err(Error::EmptyShape {
            rows: a.rows(),
            cols: n,
        });
    }
    let mut rng = RESTART_SEED.substream(Substream::Power).child(n as u64).rng();
    let mut best: Option<SpectralEstimate<T>> = None;
    for start in 0..=RESTARTS {
        let v0 = if start == 0 {
            vec![T::one(); n]
        } else {
            rng.normal_vec(n)
        };
        let est = power_from(a, v0, iters, tol)?;
        best = Some(match best {
            Some(b) if b.value >= est.value => SpectralEstimate {
                converged: b.converged,
                iterations: b.iterations.max(est.iterations),
                ..b
            },
            Some(b) => SpectralEstimate {
                iterations: b.iterations.max(est.iterations),
                ..est
            },
            None => est,
        });
    }
    Ok(best.expect("at least one start"))
}

fn power_from<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    mut v: Vec<T>,
    iters: usize,
    tol: T,
) -> Result<SpectralEstimate<T>> {
    if normalize(&mut v) == T::zero() {
        return Ok(SpectralEstimate {
            value: T::zero(),
            converged: true,
            iterations: 0,
        });
    }
    let mut sigma = T::zero();
    for it in 1..=iters {
        let u = a.apply(&v);
        let s = norm2(&u);
        if !s.is_finite() {
            return Err(Error::NumericDomain("power iteration produced a non-finite norm".into()));
        }
        if s == T::zero() {
            return Ok(SpectralEstimate {
                value: T::zero(),
                converged: true,
                iterations: it,
            });
        }
        let mut w = a.apply_adjoint(&u);
        let wn = normalize(&mut w);
        if wn == T::zero() {
            return Ok(SpectralEstimate {
                value: s,
                converged: true,
                iterations: it,
            });
        }
        let done = it > 1 && (s - sigma).abs() <= tol * s;
        sigma = s;
        v = w;
        if done {
            let value = norm2(&a.apply(&v)).max(sigma);
            return Ok(SpectralEstimate {
                value,
                converged: true,
                iterations: it,
            });
        }
    }
    let value = norm2(&a.apply(&v)).max(sigma);
    Ok(SpectralEstimate {
        value,
        converged: false,
        iterations: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_identity() {
        let d = Matrix::diag(&[3.0f64, 1.0]);
        let e = spectral_norm(&d, 200, 1e-12).unwrap();
        assert!((e.value - 3.0).abs() < 1e-10, "{e:?}");
        let i = Matrix::<f64>::identity(5);
        let e = spectral_norm(&i, 10, 1e-12).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
        assert!(e.converged);
    }

    #[test]
    fn orthogonal_start_is_recovered_by_restarts() {
        // All-ones is orthogonal to the top singular vector here.
        let a = Matrix::from_rows(&[vec![2.0f64, -2.0], vec![0.5, 0.5]]).unwrap();
        let e = spectral_norm(&a, 500, 1e-13).unwrap();
        assert!((e.value - 8f64.sqrt()).abs() < 1e-9, "{e:?}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut a = Matrix::<f64>::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(spectral_norm(&a, 10, 1e-6), Err(Error::NumericDomain(_))));
        assert!(matches!(
            spectral_norm(&Matrix::<f64>::zeros(0, 3), 10, 1e-6),
            Err(Error::EmptyShape { .. })
        ));
        assert!(spectral_norm(&Matrix::<f64>::identity(2), 0, 1e-6).is_err());
    }

    #[test]
    fn zero_matrix_has_zero_norm() {
        let e = spectral_norm(&Matrix::<f64>::zeros(3, 3), 5, 1e-9).unwrap();
        assert_eq!(e.value, 0.0);
    }
}
