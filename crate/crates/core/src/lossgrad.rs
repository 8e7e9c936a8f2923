//! Cross-entropy, the surrogate loss, closed-form gradients and a
//! finite-difference oracle.
//!
//! The output gradient at layer `l` is the rank-one matrix
//! `θ^{𝟙(2≤l≤L)} · x_{l−1} · (Σ_l Hᵀ v)ᵀ` with `H = H_{l+1}^{L+1}`; the
//! batched path computes the same quantity by backpropagating through the
//! frozen patterns with one matrix product per layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, forward_batch, output_sensitivity, ActivationTrace, BatchTrace, NetworkParams, NetworkShape};
use crate::numkit::{mean, pairwise_sum, spectral_norm, Matrix, Op, RngState};
use crate::scalar::Scalar;

/// `ℓ(z) = log(1 + e^{−z})`, evaluated as `max(−z, 0) + log1p(e^{−|z|})`.
pub fn xent<T: Scalar>(z: T) -> T {
    (-z).max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// `ℓ′(z) = −1 / (1 + e^{z})`.
pub fn xent_deriv<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        let e = (-z).exp();
        -e / (T::one() + e)
    } else {
        -T::one() / (T::one() + z.exp())
    }
}

/// Inputs (one per row, on the sphere) with `±1` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch<T> {
    pub inputs: Matrix<T>,
    pub labels: Vec<i8>,
}

impl<T: Scalar> LabeledBatch<T> {
    pub fn new(inputs: Matrix<T>, labels: Vec<i8>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "LabeledBatch labels",
                expected: inputs.rows(),
                found: labels.len(),
            });
        }
        if inputs.rows() == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y != 1 && y != -1) {
            return Err(Error::Data(format!("label {y} at sample {i} is not ±1")));
        }
        Ok(LabeledBatch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> T {
        T::of(self.labels[i] as f64)
    }

    /// The batch repeated `times` times, in order.
    pub fn repeated(&self, times: usize) -> Self {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..times {
            for i in 0..self.len() {
                rows.push(self.inputs.row(i).to_vec());
                labels.push(self.labels[i]);
            }
        }
        LabeledBatch {
            inputs: Matrix::from_rows(&rows).expect("rows share a length"),
            labels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub total: T,
    pub per_sample: Vec<T>,
}

/// `𝓔_S = −(1/n) Σ ℓ′(y_i f(x_i))`, always in `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateValue<T> {
    pub empirical: T,
}

/// One matrix per layer, shaped like the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<Matrix<T>>,
}

impl<T: Scalar> GradientSet<T> {
    /// Gradient for 1-based layer `l`.
    pub fn layer(&self, l: usize) -> &Matrix<T> {
        &self.layers[l - 1]
    }

    pub fn frobenius_norms(&self) -> Vec<T> {
        self.layers.iter().map(Matrix::frobenius_norm).collect()
    }

    pub fn spectral_norms(&self, iters: usize, tol: T) -> Result<Vec<T>> {
        self.layers
            .iter()
            .map(|g| spectral_norm(g, iters, tol).map(|e| e.value))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    /// `Σ_l tr(Δ_lᵀ G_l)`.
    pub fn inner(&self, deltas: &[Matrix<T>]) -> T {
        let terms: Vec<T> = self.layers.iter().zip(deltas).map(|(g, d)| g.frobenius_inner(d)).collect();
        pairwise_sum(&terms)
    }
}

/// `∇_{W_l} f_W(x)` from a single-input trace.
pub fn output_gradient<T: Scalar>(params: &NetworkParams<T>, trace: &ActivationTrace<T>, l: usize) -> Result<Matrix<T>> {
    if l == 0 || l > params.layers() {
        return Err(Error::IndexOutOfRange(format!("layer {l} outside 1..={}", params.layers())));
    }
    let sens = output_sensitivity(params, trace, l)?;
    let scale = params.layer_scale(l);
    let right: Vec<T> = sens
        .iter()
        .enumerate()
        .map(|(j, &s)| if trace.active(l, j) { scale * s } else { T::zero() })
        .collect();
    let left = trace.activation(l - 1);
    Ok(Matrix::from_fn(left.len(), right.len(), |i, j| left[i] * right[j]))
}

/// All layers of `∇_W f_W(x)` for one input.
pub fn output_gradients<T: Scalar>(params: &NetworkParams<T>, trace: &ActivationTrace<T>) -> Result<GradientSet<T>> {
    let layers = (1..=params.layers())
        .map(|l| output_gradient(params, trace, l))
        .collect::<Result<_>>()?;
    Ok(GradientSet { layers })
}

/// `Σ_i c_i ∇_W f_W(x_i)` for a batch trace, by batched backpropagation.
pub fn weighted_output_gradient<T: Scalar>(params: &NetworkParams<T>, trace: &BatchTrace<T>, coefs: &[T]) -> GradientSet<T> {
    let n = trace.len();
    assert_eq!(coefs.len(), n, "one coefficient per sample");
    let top = params.layers();
    let v = params.v();
    // Rows of `sens` hold ∂f/∂x_l for each sample.
    let mut sens = Matrix::from_fn(n, v.len(), |_, j| v[j]);
    let mut layers: Vec<Matrix<T>> = Vec::with_capacity(top);
    for l in (1..=top).rev() {
        let pre = &trace.preactivations[l - 1];
        let mut masked = sens.clone();
        for (m, &p) in masked.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            if !(p > T::zero()) {
                *m = T::zero();
            }
        }
        let mut weighted = masked.clone();
        for i in 0..n {
            let c = coefs[i];
            for x in weighted.row_mut(i) {
                *x = *x * c;
            }
        }
        let (r, c) = params.weight(l).shape();
        let mut g = Matrix::zeros(r, c);
        Matrix::gemm(
            params.layer_scale(l),
            &trace.activations[l - 1],
            Op::T,
            &weighted,
            Op::N,
            T::zero(),
            &mut g,
        );
        layers.push(g);
        if l > 1 {
            let back = Matrix::matmul(&masked, Op::N, params.weight(l), Op::T);
            if params.is_skip_layer(l) {
                sens.axpy(params.theta(), &back);
            } else {
                sens = back;
            }
        }
    }
    layers.reverse();
    GradientSet { layers }
}

/// Everything one gradient-descent evaluation produces.
#[derive(Clone, Debug)]
pub struct BatchEvaluation<T> {
    pub loss: LossValue<T>,
    pub surrogate: SurrogateValue<T>,
    pub grads: GradientSet<T>,
    pub trace: BatchTrace<T>,
    /// Fraction of samples with `y·f(x) ≤ 0`.
    pub train_error: T,
}

/// Loss, surrogate and gradient of `L_S` in one pass, keeping the trace.
pub fn evaluate_batch<T: Scalar>(params: &NetworkParams<T>, batch: &LabeledBatch<T>) -> Result<BatchEvaluation<T>> {
    let trace = forward_batch(params, &batch.inputs)?;
    Ok(evaluate_trace(params, batch, trace))
}

pub(crate) fn evaluate_trace<T: Scalar>(params: &NetworkParams<T>, batch: &LabeledBatch<T>, trace: BatchTrace<T>) -> BatchEvaluation<T> {
    let n = batch.len();
    let nt = T::of(n as f64);
    let margins: Vec<T> = (0..n).map(|i| batch.label(i) * trace.outputs[i]).collect();
    let per_sample: Vec<T> = margins.iter().map(|&z| xent(z)).collect();
    let neg_deriv: Vec<T> = margins.iter().map(|&z| -xent_deriv(z)).collect();
    let coefs: Vec<T> = (0..n)
        .map(|i| xent_deriv(margins[i]) * batch.label(i) / nt)
        .collect();
    let grads = weighted_output_gradient(params, &trace, &coefs);
    let errors = margins.iter().filter(|&&z| z <= T::zero()).count();
    BatchEvaluation {
        loss: LossValue {
            total: mean(&per_sample),
            per_sample,
        },
        surrogate: SurrogateValue {
            empirical: mean(&neg_deriv),
        },
        grads,
        trace,
        train_error: T::of(errors as f64 / n as f64),
    }
}

/// `(L_S, 𝓔_S, ∇L_S)`.
pub fn batch_loss_grad<T: Scalar>(
    params: &NetworkParams<T>,
    batch: &LabeledBatch<T>,
) -> Result<(LossValue<T>, SurrogateValue<T>, GradientSet<T>)> {
    let e = evaluate_batch(params, batch)?;
    Ok((e.loss, e.surrogate, e.grads))
}

/// Loss and surrogate only (no gradient).
pub fn batch_loss<T: Scalar>(params: &NetworkParams<T>, batch: &LabeledBatch<T>) -> Result<(LossValue<T>, SurrogateValue<T>)> {
    let trace = forward_batch(params, &batch.inputs)?;
    let n = batch.len();
    let margins: Vec<T> = (0..n).map(|i| batch.label(i) * trace.outputs[i]).collect();
    let per_sample: Vec<T> = margins.iter().map(|&z| xent(z)).collect();
    let neg_deriv: Vec<T> = margins.iter().map(|&z| -xent_deriv(z)).collect();
    Ok((
        LossValue {
            total: mean(&per_sample),
            per_sample,
        },
        SurrogateValue {
            empirical: mean(&neg_deriv),
        },
    ))
}

/// Central difference of `f_W(x)` in entry `(i, j)` of `W_l`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiniteDiff<T> {
    pub value: T,
    /// Some pattern bit differs between `W ± h e_ij` and `W`; the entry is
    /// not differentiable along this segment and must not be compared.
    pub flipped: bool,
}

pub fn finite_diff_oracle<T: Scalar>(
    params: &NetworkParams<T>,
    x: &[T],
    l: usize,
    i: usize,
    j: usize,
    h: T,
) -> Result<FiniteDiff<T>> {
    if !(h > T::zero()) {
        return Err(Error::Precondition(format!("finite-difference step must be positive, got {h}")));
    }
    if l == 0 || l > params.layers() {
        return Err(Error::IndexOutOfRange(format!("layer {l}")));
    }
    let (r, c) = params.weight(l).shape();
    if i >= r || j >= c {
        return Err(Error::IndexOutOfRange(format!("entry ({i}, {j}) of W_{l} with shape {r}x{c}")));
    }
    let base = forward(params, x)?;
    let mut plus = params.clone();
    plus.weight_mut(l)[(i, j)] = params.weight(l)[(i, j)] + h;
    let mut minus = params.clone();
    minus.weight_mut(l)[(i, j)] = params.weight(l)[(i, j)] - h;
    let tp = forward(&plus, x)?;
    let tm = forward(&minus, x)?;
    let flipped = patterns_differ(&base, &tp) || patterns_differ(&base, &tm);
    Ok(FiniteDiff {
        value: (tp.output - tm.output) / (h + h),
        flipped,
    })
}

fn patterns_differ<T: Scalar>(a: &ActivationTrace<T>, b: &ActivationTrace<T>) -> bool {
    a.preactivations
        .iter()
        .zip(&b.preactivations)
        .any(|(x, y)| x.iter().zip(y).any(|(&p, &q)| (p > T::zero()) != (q > T::zero())))
}

/// Outcome of comparing analytic output gradients with central differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub nets: usize,
    pub compared: usize,
    /// Entries skipped because a pattern bit flipped within `±h`.
    pub skipped: usize,
    /// Largest `|fd − g| / max(|fd|, |g|, abs_floor)` per layer.
    pub max_rel_error: Vec<f64>,
    /// Largest `|fd − g| / max(|fd|, |g|)` over entries with a nonzero value.
    pub max_rel_error_unfloored: f64,
    /// Entries with `max(|fd|, |g|) < abs_floor`.
    pub below_floor: usize,
    pub abs_floor: f64,
    pub tolerance: f64,
}

impl GradCheckSummary {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.compared > 0 && self.worst() <= self.tolerance
    }
}

/// Every weight entry of `nets` random networks of `shape`, each at one random
/// sphere input, checked against [`finite_diff_oracle`] with step `h`.
///
/// The relative error's denominator is floored at `abs_floor`: a central
/// difference carries roundoff of order `ε·|f|/h` (about `1e-12` here), so
/// near-zero entries are judged by absolute error `abs_floor·tolerance`.
pub fn gradient_check_suite(
    root: RngState,
    shape: NetworkShape,
    nets: usize,
    h: f64,
    tolerance: f64,
    abs_floor: f64,
) -> Result<GradCheckSummary> {
    let mut summary = GradCheckSummary {
        nets,
        compared: 0,
        skipped: 0,
        max_rel_error: vec![0.0; shape.layers()],
        max_rel_error_unfloored: 0.0,
        below_floor: 0,
        abs_floor,
        tolerance,
    };
    for k in 0..nets as u64 {
        let stream = root.child(k);
        let params = NetworkParams::<f64>::init_gaussian(stream.child(0), shape)?;
        let x: Vec<f64> = stream.child(1).rng().sphere(shape.input_dim);
        let trace = forward(&params, &x)?;
        for l in 1..=params.layers() {
            let g = output_gradient(&params, &trace, l)?;
            let (rows, cols) = g.shape();
            for i in 0..rows {
                for j in 0..cols {
                    let fd = finite_diff_oracle(&params, &x, l, i, j, h)?;
                    if fd.flipped {
                        summary.skipped += 1;
                        continue;
                    }
                    let a = g[(i, j)];
                    let err = (fd.value - a).abs();
                    let scale = fd.value.abs().max(a.abs());
                    if scale > 0.0 {
                        summary.max_rel_error_unfloored = summary.max_rel_error_unfloored.max(err / scale);
                    }
                    if scale < abs_floor {
                        summary.below_floor += 1;
                    }
                    let rel = err / scale.max(abs_floor);
                    summary.max_rel_error[l - 1] = summary.max_rel_error[l - 1].max(rel);
                    summary.compared += 1;
                }
            }
        }
    }
    Ok(summary)
}
