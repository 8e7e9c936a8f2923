use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{fit_upper, loglog_slope, DetailTable, PerturbationBall, ProbeReport, Sense};
use crate::error::{Error, Result};
use crate::model::{all_output_sensitivities, forward, forward_batch, interlayer_norms_batch, ActivationTrace, NetworkParams};
use crate::numkit::{dot, norm2, Matrix, RngState};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationNormConfig {
    /// Band `[lower, upper]` every `‖x_l‖₂` must fall in.
    pub lower: f64,
    pub upper: f64,
    /// Interlayer ranges `(from, to)`; residual ranges must sit inside `2..=L`.
    pub pairs: Vec<(usize, usize)>,
    /// `c` in the interlayer bound `exp(c·θ·L)`.
    pub growth_constant: f64,
    pub power_iters: usize,
    pub power_tol: f64,
}

impl Default for ActivationNormConfig {
    fn default() -> Self {
        ActivationNormConfig {
            lower: 0.5,
            upper: 1.5,
            pairs: Vec::new(),
            growth_constant: 3.0,
            power_iters: 200,
            power_tol: 1e-6,
        }
    }
}

/// Hidden-layer norms `‖x_l‖₂` and interlayer operator norms at fixed weights.
pub fn probe_activation_norms<T: Scalar>(
    params: &NetworkParams<T>,
    inputs: &Matrix<T>,
    cfg: &ActivationNormConfig,
) -> Result<ProbeReport> {
    let trace = forward_batch(params, inputs)?;
    let theta = params.theta().as_f64();
    let depth = params.depth();
    let mut details = DetailTable::new(&["from", "to", "mean"]);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for l in 1..=params.layers() {
        let norms: Vec<f64> = (0..trace.len()).map(|i| norm2(trace.activation(l, i)).as_f64()).collect();
        let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = norms.iter().copied().fold(0.0, f64::max);
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        lo = lo.min(min);
        hi = hi.max(max);
        let lf = l as f64;
        details.push("norm_min", min, cfg.lower, Sense::Lower, &[lf, lf, mean]);
        details.push("norm_max", max, cfg.upper, Sense::Upper, &[lf, lf, mean]);
    }
    let mut growth_fit = 0.0f64;
    let mut max_interlayer = 0.0f64;
    let bound = (cfg.growth_constant * theta * depth as f64).exp();
    for &(from, to) in &cfg.pairs {
        let skip_only = (from..=to).all(|l| params.is_skip_layer(l));
        if from > to || from < 1 || to > params.layers() {
            return Err(Error::Precondition(format!("interlayer range {from}..={to} is outside 1..={}", params.layers())));
        }
        let est = interlayer_norms_batch(params, &trace, from, to, cfg.power_iters, T::of(cfg.power_tol))?;
        let vals: Vec<f64> = est.iter().map(|e| e.value.as_f64()).collect();
        let max = vals.iter().copied().fold(0.0, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        max_interlayer = max_interlayer.max(max);
        let extras = [from as f64, to as f64, mean];
        if skip_only {
            growth_fit = growth_fit.max(max.ln() / (theta * depth as f64));
            details.push("interlayer", max, bound, Sense::Upper, &extras);
        } else {
            details.push("interlayer", max, f64::INFINITY, Sense::Info, &extras);
        }
    }
    let mut measured = BTreeMap::new();
    measured.insert("min_norm".into(), lo);
    measured.insert("max_norm".into(), hi);
    measured.insert("max_interlayer".into(), max_interlayer);
    measured.insert("interlayer_bound".into(), bound);
    ProbeReport::new("activation_norms", cfg, trace.len(), growth_fit, measured, details)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputLipschitzConfig {
    /// Pairs closer than this are skipped.
    pub min_distance: f64,
    /// Configured `C′`; the fitted value is used when absent.
    pub constant: Option<f64>,
}

impl Default for InputLipschitzConfig {
    fn default() -> Self {
        InputLipschitzConfig {
            min_distance: 1e-6,
            constant: None,
        }
    }
}

/// `max_l ‖x_l − x′_l‖₂ / ‖x − x′‖₂` over input pairs.
pub fn probe_input_lipschitz<T: Scalar>(
    params: &NetworkParams<T>,
    pairs: &[(Vec<T>, Vec<T>)],
    cfg: &InputLipschitzConfig,
) -> Result<ProbeReport> {
    let mut ratios = Vec::new();
    let mut skipped = 0usize;
    for (k, (x, xp)) in pairs.iter().enumerate() {
        let dist = crate::numkit::distance(x, xp).as_f64();
        if dist < cfg.min_distance {
            skipped += 1;
            continue;
        }
        let (a, b) = (forward(params, x)?, forward(params, xp)?);
        let (layer, ratio) = (1..=params.layers())
            .map(|l| (l, crate::numkit::distance(a.activation(l), b.activation(l)).as_f64() / dist))
            .fold((0, 0.0f64), |best, cur| if cur.1 > best.1 { cur } else { best });
        ratios.push((k, layer, ratio, dist));
    }
    let fitted = fit_upper(ratios.iter().map(|r| (r.2, 1.0)));
    let c = cfg.constant.unwrap_or(fitted);
    let mut details = DetailTable::new(&["pair", "layer", "input_distance"]);
    for &(k, layer, ratio, dist) in &ratios {
        details.push("ratio", ratio, c, Sense::Upper, &[k as f64, layer as f64, dist]);
    }
    let mut measured = BTreeMap::new();
    measured.insert("max_ratio".into(), fitted);
    measured.insert("skipped_pairs".into(), skipped as f64);
    ProbeReport::new("input_lipschitz", cfg, ratios.len(), fitted, measured, details)
}

/// `S_l(x, β) = {j : |w_{l,j}ᵀ x_{l−1}| ≤ β}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdIndexSet {
    pub layer: usize,
    pub indices: Vec<usize>,
}

impl ThresholdIndexSet {
    pub fn of<T: Scalar>(trace: &ActivationTrace<T>, layer: usize, beta: T) -> Self {
        let indices = trace.preactivations[layer - 1]
            .iter()
            .enumerate()
            .filter(|(_, z)| z.abs() <= beta)
            .map(|(j, _)| j)
            .collect();
        ThresholdIndexSet { layer, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `|S_l(x_i, β)|` summed over the samples of a preactivation matrix.
pub fn threshold_count<T: Scalar>(pre: &Matrix<T>, beta: T) -> usize {
    pre.as_slice().iter().filter(|z| z.abs() <= beta).count()
}

/// Sizes of the near-threshold sets `S_l(x, β)` over a `β` grid.
pub fn probe_threshold_indices<T: Scalar>(
    params: &NetworkParams<T>,
    inputs: &Matrix<T>,
    beta_grid: &[f64],
) -> Result<ProbeReport> {
    if beta_grid.iter().any(|&b| !(b >= 0.0)) {
        return Err(Error::Config("beta grid must be nonnegative".into()));
    }
    let trace = forward_batch(params, inputs)?;
    let n = trace.len() as f64;
    let mut details = DetailTable::new(&["beta", "layer", "width", "max_count"]);
    let mut fits = Vec::new();
    let mut curve = Vec::new();
    for &beta in beta_grid {
        let mut total = 0.0;
        let mut units = 0.0;
        for l in 1..=params.layers() {
            let pre = &trace.preactivations[l - 1];
            let width = pre.cols() as f64;
            let count = threshold_count(pre, T::of(beta)) as f64 / n;
            let max_count = (0..pre.rows())
                .map(|i| pre.row(i).iter().filter(|z| z.abs() <= T::of(beta)).count())
                .max()
                .unwrap_or(0) as f64;
            let expr = width.powf(1.5) * beta;
            fits.push((max_count, expr, beta, l, width, count));
            total += count;
            units += width;
        }
        curve.push((beta, total / units));
    }
    let fitted = fit_upper(fits.iter().map(|f| (f.0, f.1)));
    for &(max_count, expr, beta, l, width, mean) in &fits {
        let bound = if expr > 0.0 { fitted * expr } else { 0.0 };
        details.push("count", max_count, bound, Sense::Upper, &[beta, l as f64, width, max_count]);
        details.push("mean_count", mean, f64::INFINITY, Sense::Info, &[beta, l as f64, width, max_count]);
    }
    let mut measured = BTreeMap::new();
    if let Some(s) = loglog_slope(&curve) {
        measured.insert("beta_slope".into(), s);
    }
    for &(beta, frac) in &curve {
        measured.insert(format!("fraction@{beta}"), frac);
    }
    ProbeReport::new("threshold_indices", &beta_grid, trace.len(), fitted, measured, details)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseOutputConfig {
    pub tau: f64,
    pub sparsity: usize,
    pub trials: usize,
    pub seed: RngState,
    pub constant: Option<f64>,
}

/// `vᵀ H̃_l^{L+1} a` for `l = 2 … L+1`.
pub fn sparse_output_values<T: Scalar>(params: &NetworkParams<T>, trace: &ActivationTrace<T>, a: &[T]) -> Vec<T> {
    let sens = all_output_sensitivities(params, trace);
    (2..=params.layers()).map(|l| dot(&sens[l - 1], a)).collect()
}

fn sparse_unit<T: Scalar>(rng: &mut crate::numkit::SampleRng, dim: usize, s: usize) -> Vec<T> {
    let mut a = vec![T::zero(); dim];
    for j in rng.choose_indices(dim, s) {
        a[j] = rng.normal();
    }
    crate::numkit::normalize(&mut a);
    a
}

/// `max_l |vᵀ H̃_l^{L+1} a|` for random `s`-sparse unit `a`, sphere `x` and
/// weights `W̃` in the `τ`-ball.
pub fn probe_sparse_output<T: Scalar>(params: &NetworkParams<T>, cfg: &SparseOutputConfig) -> Result<ProbeReport> {
    let m = params.shape().width;
    if cfg.sparsity == 0 || cfg.sparsity > m {
        return Err(Error::Config(format!("sparsity must be in 1..={m}, got {}", cfg.sparsity)));
    }
    let ball = PerturbationBall::new(params, cfg.tau, cfg.seed.child(0))?;
    let mf = m as f64;
    let expr = cfg.tau * mf.sqrt() + (cfg.sparsity as f64 * mf.ln()).sqrt();
    let mut values = Vec::with_capacity(cfg.trials);
    for t in 0..cfg.trials {
        let mut rng = cfg.seed.child(1 + t as u64).rng();
        let x: Vec<T> = rng.sphere(params.input_dim());
        let a: Vec<T> = sparse_unit(&mut rng, m, cfg.sparsity);
        let w = ball.sample(t as u64)?;
        let trace = forward(&w, &x)?;
        let vals = sparse_output_values(&w, &trace, &a);
        let (layer, best) = vals
            .iter()
            .enumerate()
            .map(|(k, v)| (k + 2, v.abs().as_f64()))
            .fold((0, 0.0f64), |b, c| if c.1 > b.1 { c } else { b });
        values.push((best, layer));
    }
    let fitted = fit_upper(values.iter().map(|v| (v.0, expr)));
    let c = cfg.constant.unwrap_or(fitted);
    let mut details = DetailTable::new(&["trial", "layer", "expr"]);
    for (t, &(v, layer)) in values.iter().enumerate() {
        details.push("output", v, c * expr, Sense::Upper, &[t as f64, layer as f64, expr]);
    }
    let mut measured = BTreeMap::new();
    measured.insert("max_abs".into(), values.iter().map(|v| v.0).fold(0.0, f64::max));
    measured.insert("mean_abs".into(), values.iter().map(|v| v.0).sum::<f64>() / values.len().max(1) as f64);
    measured.insert("expr".into(), expr);
    ProbeReport::new("sparse_output", cfg, cfg.trials, fitted, measured, details)
}
