//! Dense linear algebra and random sampling substrate.

mod matrix;
pub mod reduce;
mod rng;
mod spectral;

pub use matrix::{Matrix, Op};
pub use reduce::{distance, dot, mean, norm2, normalize, pairwise_sum};
pub use rng::{RngState, SampleRng, Substream};
pub use spectral::{operator_norm, spectral_norm, LinearOperator, SpectralEstimate, RESTARTS};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `rows × cols` matrix with i.i.d. `N(0, variance)` entries, drawn row-major.
pub fn gaussian_matrix<T: Scalar>(
    rng: &mut SampleRng,
    rows: usize,
    cols: usize,
    variance: T,
) -> Result<Matrix<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyShape { rows, cols });
    }
    if !(variance > T::zero()) || !variance.is_finite() {
        return Err(Error::Precondition(format!(
            "gaussian_matrix variance must be positive and finite, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    let data = (0..rows * cols).map(|_| rng.normal::<T>() * sd).collect();
    Matrix::from_vec(rows, cols, data)
}
