use serde::{Deserialize, Serialize};

use super::reduce::{pairwise_sum_by, dot};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Whether an operand of [`Matrix::gemm`] is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "Matrix::from_rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(entries: &[T]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: T, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "axpy: shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    pub fn sub(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    /// `√(Σ a_ij²)` with a fixed pairwise summation tree.
    pub fn frobenius_norm(&self) -> T {
        pairwise_sum_by(&self.data, |x| x * x).sqrt()
    }

    /// `Σ a_ij b_ij`, i.e. `tr(Aᵀ B)`.
    pub fn frobenius_inner(&self, other: &Matrix<T>) -> T {
        assert_eq!(self.shape(), other.shape(), "frobenius_inner: shape mismatch");
        dot(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    /// `A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec: length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`.
    pub fn matvec_t(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.rows, "matvec_t: length mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + yi * a;
            }
        }
        out
    }

    /// `alpha · op(A) · op(B)`.
    pub fn matmul(a: &Matrix<T>, ta: Op, b: &Matrix<T>, tb: Op) -> Matrix<T> {
        let (m, _) = op_shape(a, ta);
        let (_, n) = op_shape(b, tb);
        let mut c = Matrix::zeros(m, n);
        Matrix::gemm(T::one(), a, ta, b, tb, T::zero(), &mut c);
        c
    }

    /// `C ← alpha · op(A) · op(B) + beta · C`.
    pub fn gemm(alpha: T, a: &Matrix<T>, ta: Op, b: &Matrix<T>, tb: Op, beta: T, c: &mut Matrix<T>) {
        let (m, k) = op_shape(a, ta);
        let (k2, n) = op_shape(b, tb);
        assert_eq!(k, k2, "gemm: inner dimension mismatch");
        assert_eq!(c.shape(), (m, n), "gemm: output shape mismatch");
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            for x in c.data.iter_mut() {
                *x = beta * *x;
            }
            return;
        }
        let (rsa, csa) = strides(a, ta);
        let (rsb, csb) = strides(b, tb);
        // SAFETY: shapes were checked above and `c` is a distinct allocation.
        unsafe {
            T::gemm_raw(
                m,
                k,
                n,
                alpha,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
    }
}

fn op_shape<T>(a: &Matrix<T>, t: Op) -> (usize, usize) {
    match t {
        Op::N => (a.rows, a.cols),
        Op::T => (a.cols, a.rows),
    }
}

fn strides<T>(a: &Matrix<T>, t: Op) -> (isize, isize) {
    match t {
        Op::N => (a.cols as isize, 1),
        Op::T => (1, a.cols as isize),
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                c[(i, j)] = s;
            }
        }
        c
    }

    fn rel_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Matrix::<f64>::zeros(3, 4).frobenius_norm(), 0.0);
        assert_eq!(Matrix::from_fn(2, 2, |_, _| 1.0f64).frobenius_norm(), 2.0);
    }

    #[test]
    fn transposed_products() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let b = Matrix::from_fn(3, 2, |i, j| (i as f64) * 0.5 - j as f64);
        let got = Matrix::matmul(&a, Op::T, &b, Op::N);
        let want = naive_matmul(&a.transpose(), &b);
        assert!(rel_err(&got, &want) < 1e-14);
        let got = Matrix::matmul(&b, Op::T, &a, Op::N);
        assert!(rel_err(&got, &naive_matmul(&b.transpose(), &a)) < 1e-14);
        let got = Matrix::matmul(&a, Op::N, &a, Op::T);
        assert!(rel_err(&got, &naive_matmul(&a, &a.transpose())) < 1e-14);
    }

    #[test]
    fn matvec_agree_with_gemm() {
        let a = Matrix::from_fn(5, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 2.0));
        let x = [1.0, -2.0, 0.5];
        let y = [0.1, 0.2, 0.3, 0.4, 0.5];
        let ax = a.matvec(&x);
        let want = naive_matmul(&a, &Matrix::from_vec(3, 1, x.to_vec()).unwrap());
        for i in 0..5 {
            assert!((ax[i] - want[(i, 0)]).abs() < 1e-14);
        }
        let aty = a.matvec_t(&y);
        let want = naive_matmul(&a.transpose(), &Matrix::from_vec(5, 1, y.to_vec()).unwrap());
        for j in 0..3 {
            assert!((aty[j] - want[(j, 0)]).abs() < 1e-14);
        }
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0f64; 3]).is_err());
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop(
            m in 1usize..24, k in 1usize..24, n in 1usize..24, seed in any::<u64>()
        ) {
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let a = Matrix::from_fn(m, k, |_, _| next());
            let b = Matrix::from_fn(k, n, |_, _| next());
            let got = Matrix::matmul(&a, Op::N, &b, Op::N);
            prop_assert!(rel_err(&got, &naive_matmul(&a, &b)) < 1e-12);
        }

        #[test]
        fn frobenius_matches_naive(entries in proptest::collection::vec(-1e3f64..1e3, 1..500)) {
            let n = entries.len();
            let naive = entries.iter().fold(0.0, |s, x| s + x * x).sqrt();
            let a = Matrix::from_vec(1, n, entries).unwrap();
            let f = a.frobenius_norm();
            prop_assert!((f - naive).abs() <= 1e-12 * naive.max(1e-300));
        }
    }
}
