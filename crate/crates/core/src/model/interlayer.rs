//! Frozen-pattern interlayer operators
//! `H_l^{l'} = Π_{r=l}^{l'} (I + θ Σ_r W_rᵀ)`, with `Σ_r W_rᵀ` factors at the
//! boundary layers `1` and `L+1` (and at every layer of a plain network).
//!
//! The operators never materialize a product; they apply factor by factor
//! using the activation pattern recorded in a trace.

use super::forward::{ActivationTrace, BatchTrace};
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::numkit::{
    dot, norm2, operator_norm, LinearOperator, Matrix, Op, RngState, SpectralEstimate, Substream,
};
use crate::scalar::Scalar;

/// `H_from^to` for the input whose trace is given.
#[derive(Clone, Copy, Debug)]
pub struct InterlayerOp<'a, T> {
    params: &'a NetworkParams<T>,
    trace: &'a ActivationTrace<T>,
    from: usize,
    to: usize,
}

fn check_range<T: Scalar>(params: &NetworkParams<T>, from: usize, to: usize) -> Result<()> {
    let top = params.layers();
    if from == 0 || from > top + 1 || to > top {
        return Err(Error::IndexOutOfRange(format!(
            "interlayer H_{from}^{to} outside layers 1..={top}"
        )));
    }
    Ok(())
}

impl<'a, T: Scalar> InterlayerOp<'a, T> {
    pub fn new(params: &'a NetworkParams<T>, trace: &'a ActivationTrace<T>, from: usize, to: usize) -> Result<Self> {
        check_range(params, from, to)?;
        if trace.layers() != params.layers() {
            return Err(Error::DimensionMismatch {
                context: "InterlayerOp trace layers",
                expected: params.layers(),
                found: trace.layers(),
            });
        }
        Ok(InterlayerOp { params, trace, from, to })
    }

    pub fn from_layer(&self) -> usize {
        self.from
    }

    pub fn to_layer(&self) -> usize {
        self.to
    }

    pub fn is_identity(&self) -> bool {
        self.from > self.to
    }

    fn domain_dim(&self) -> usize {
        self.params.shape().layer_dims(self.from).0
    }

    fn range_dim(&self) -> usize {
        self.params.shape().layer_dims(self.to).1
    }

    /// `H a`, with the patterns frozen from the trace.
    pub fn interlayer_apply(&self, a: &[T]) -> Result<Vec<T>> {
        if self.is_identity() {
            return Ok(a.to_vec());
        }
        if a.len() != self.domain_dim() {
            return Err(Error::DimensionMismatch {
                context: "interlayer_apply",
                expected: self.domain_dim(),
                found: a.len(),
            });
        }
        Ok(self.apply_unchecked(a))
    }

    fn apply_unchecked(&self, a: &[T]) -> Vec<T> {
        let mut cur = a.to_vec();
        for r in self.from..=self.to {
            let w = self.params.weight(r);
            let mut z = w.matvec_t(&cur);
            for (j, zj) in z.iter_mut().enumerate() {
                if !self.trace.active(r, j) {
                    *zj = T::zero();
                }
            }
            if self.params.is_skip_layer(r) {
                let th = self.params.theta();
                for (c, &zj) in cur.iter_mut().zip(&z) {
                    *c = *c + th * zj;
                }
            } else {
                cur = z;
            }
        }
        cur
    }

    fn adjoint_unchecked(&self, b: &[T]) -> Vec<T> {
        let mut cur = b.to_vec();
        for r in (self.from..=self.to).rev() {
            let w = self.params.weight(r);
            let masked: Vec<T> = cur
                .iter()
                .enumerate()
                .map(|(j, &c)| if self.trace.active(r, j) { c } else { T::zero() })
                .collect();
            let z = w.matvec(&masked);
            if self.params.is_skip_layer(r) {
                let th = self.params.theta();
                for (c, &zj) in cur.iter_mut().zip(&z) {
                    *c = *c + th * zj;
                }
            } else {
                cur = z;
            }
        }
        cur
    }

    /// `Hᵀ b`.
    pub fn adjoint_apply(&self, b: &[T]) -> Result<Vec<T>> {
        if self.is_identity() {
            return Ok(b.to_vec());
        }
        if b.len() != self.range_dim() {
            return Err(Error::DimensionMismatch {
                context: "interlayer adjoint",
                expected: self.range_dim(),
                found: b.len(),
            });
        }
        Ok(self.adjoint_unchecked(b))
    }

    /// `‖H‖₂` by matrix-free power iteration.
    pub fn interlayer_norm(&self, iters: usize, tol: T) -> Result<SpectralEstimate<T>> {
        if self.is_identity() {
            return Ok(SpectralEstimate {
                value: T::one(),
                converged: true,
                iterations: 0,
            });
        }
        operator_norm(self, iters, tol)
    }

    /// Materializes `H` column by column; intended for small networks.
    pub fn to_matrix(&self) -> Matrix<T> {
        let n = self.domain_dim();
        let rows = if self.is_identity() { n } else { self.range_dim() };
        let mut h = Matrix::zeros(rows, n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = if self.is_identity() { e } else { self.apply_unchecked(&e) };
            for (i, c) in col.into_iter().enumerate() {
                h[(i, j)] = c;
            }
        }
        h
    }
}

impl<T: Scalar> LinearOperator<T> for InterlayerOp<'_, T> {
    fn rows(&self) -> usize {
        self.range_dim()
    }
    fn cols(&self) -> usize {
        self.domain_dim()
    }
    fn apply(&self, x: &[T]) -> Vec<T> {
        self.apply_unchecked(x)
    }
    fn apply_adjoint(&self, y: &[T]) -> Vec<T> {
        self.adjoint_unchecked(y)
    }
}

/// `(vᵀ H_{l+1}^{L+1})ᵀ`, the sensitivity of the output to `x_l`.
pub fn output_sensitivity<T: Scalar>(params: &NetworkParams<T>, trace: &ActivationTrace<T>, l: usize) -> Result<Vec<T>> {
    let op = InterlayerOp::new(params, trace, l + 1, params.layers())?;
    op.adjoint_apply(params.v())
}

/// [`output_sensitivity`] for every `l = 0 … L+1` from one backward pass.
pub fn all_output_sensitivities<T: Scalar>(params: &NetworkParams<T>, trace: &ActivationTrace<T>) -> Vec<Vec<T>> {
    let top = params.layers();
    let mut out = vec![Vec::new(); top + 1];
    let mut sens = params.v().to_vec();
    for r in (1..=top).rev() {
        let masked: Vec<T> = sens
            .iter()
            .enumerate()
            .map(|(j, &s)| if trace.active(r, j) { s } else { T::zero() })
            .collect();
        let back = params.weight(r).matvec(&masked);
        out[r] = sens;
        sens = if params.is_skip_layer(r) {
            out[r].iter().zip(&back).map(|(&a, &b)| a + params.theta() * b).collect()
        } else {
            back
        };
    }
    out[0] = sens;
    out
}

/// `vᵀ H_{l+1}^{L+1} x_l`; equals the network output for every `l`.
pub fn output_via_split<T: Scalar>(params: &NetworkParams<T>, trace: &ActivationTrace<T>, l: usize) -> Result<T> {
    let op = InterlayerOp::new(params, trace, l + 1, params.layers())?;
    let pushed = op.interlayer_apply(trace.activation(l))?;
    Ok(dot(params.v(), &pushed))
}

fn apply_rows<T: Scalar>(params: &NetworkParams<T>, trace: &BatchTrace<T>, from: usize, to: usize, a: &Matrix<T>) -> Matrix<T> {
    let mut cur = a.clone();
    for r in from..=to {
        let mut z = Matrix::matmul(&cur, Op::N, params.weight(r), Op::N);
        let pre = &trace.preactivations[r - 1];
        for (zv, &p) in z.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            if !(p > T::zero()) {
                *zv = T::zero();
            }
        }
        if params.is_skip_layer(r) {
            cur.axpy(params.theta(), &z);
        } else {
            cur = z;
        }
    }
    cur
}

fn adjoint_rows<T: Scalar>(params: &NetworkParams<T>, trace: &BatchTrace<T>, from: usize, to: usize, b: &Matrix<T>) -> Matrix<T> {
    let mut cur = b.clone();
    for r in (from..=to).rev() {
        let pre = &trace.preactivations[r - 1];
        let mut masked = cur.clone();
        for (m, &p) in masked.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            if !(p > T::zero()) {
                *m = T::zero();
            }
        }
        let z = Matrix::matmul(&masked, Op::N, params.weight(r), Op::T);
        if params.is_skip_layer(r) {
            cur.axpy(params.theta(), &z);
        } else {
            cur = z;
        }
    }
    cur
}

fn row_norms<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    (0..a.rows()).map(|i| norm2(a.row(i))).collect()
}

/// `‖H_from^to(x_i)‖₂` for every sample of a batch trace at once.
///
/// Runs the same power iteration as [`InterlayerOp::interlayer_norm`], but
/// advances all samples together so each factor is one matrix product.
pub fn interlayer_norms_batch<T: Scalar>(
    params: &NetworkParams<T>,
    trace: &BatchTrace<T>,
    from: usize,
    to: usize,
    iters: usize,
    tol: T,
) -> Result<Vec<SpectralEstimate<T>>> {
    check_range(params, from, to)?;
    if iters == 0 {
        return Err(Error::Precondition("power iteration needs iters >= 1".into()));
    }
    let n = trace.len();
    if from > to {
        return Ok(vec![
            SpectralEstimate {
                value: T::one(),
                converged: true,
                iterations: 0
            };
            n
        ]);
    }
    let dim = params.shape().layer_dims(from).0;
    let mut best: Vec<SpectralEstimate<T>> = vec![
        SpectralEstimate {
            value: T::zero(),
            converged: false,
            iterations: 0
        };
        n
    ];
    let mut rng = RngState::new(0x5eed_5eed, 0).substream(Substream::Power).child(dim as u64).rng();
    for start in 0..=crate::numkit::RESTARTS {
        let mut v = if start == 0 {
            Matrix::from_fn(n, dim, |_, _| T::one())
        } else {
            // One shared random start per restart, as in the single-operator path.
            let s: Vec<T> = rng.normal_vec(dim);
            Matrix::from_fn(n, dim, |_, j| s[j])
        };
        normalize_rows(&mut v);
        let mut sigma = vec![T::zero(); n];
        let mut converged = vec![false; n];
        let mut used = iters;
        for it in 1..=iters {
            let u = apply_rows(params, trace, from, to, &v);
            let s = row_norms(&u);
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericDomain("interlayer power iteration diverged".into()));
            }
            let mut w = adjoint_rows(params, trace, from, to, &u);
            normalize_rows(&mut w);
            for i in 0..n {
                if it > 1 && (s[i] - sigma[i]).abs() <= tol * s[i] {
                    converged[i] = true;
                }
                sigma[i] = s[i];
            }
            v = w;
            if converged.iter().all(|&c| c) {
                used = it;
                break;
            }
        }
        let fin = row_norms(&apply_rows(params, trace, from, to, &v));
        for i in 0..n {
            let value = fin[i].max(sigma[i]);
            if value > best[i].value || start == 0 {
                best[i] = SpectralEstimate {
                    value,
                    converged: converged[i],
                    iterations: used,
                };
            }
        }
    }
    Ok(best)
}

fn normalize_rows<T: Scalar>(a: &mut Matrix<T>) {
    for i in 0..a.rows() {
        crate::numkit::normalize(a.row_mut(i));
    }
}
