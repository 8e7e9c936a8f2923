//! Constant-step full-batch gradient descent with per-step instrumentation.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lossgrad::{evaluate_batch, BatchEvaluation, GradientSet, LabeledBatch};
use crate::model::{BatchTrace, NetworkParams};
use crate::numkit::{norm2, spectral_norm, Matrix, RngState};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Step size `η`.
    pub eta: f64,
    /// Maximum number of gradient steps `K`.
    pub max_steps: usize,
    /// Radius `τ` of the weight neighborhood; leaving it is logged, not fatal.
    pub tau_budget: Option<f64>,
    /// Stop once `𝓔_S` is at or below this value.
    pub stop_surrogate: f64,
    /// Also require zero training error before stopping.
    pub stop_requires_separation: bool,
    /// Keep one trajectory record every this many steps.
    pub record_every: usize,
    /// Skip trajectory records entirely (sweeps that only need the outcome).
    pub skip_records: bool,
    /// Power-iteration budget for the spectral norms in `h_k`.
    pub spectral_iters: usize,
    pub spectral_tol: f64,
    pub seed: RngState,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1.0,
            max_steps: 2000,
            tau_budget: None,
            stop_surrogate: 0.0,
            stop_requires_separation: false,
            record_every: 1,
            skip_records: false,
            spectral_iters: 100,
            spectral_tol: 1e-6,
            seed: RngState::root(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("step size must be finite and positive, got {}", self.eta)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if self.spectral_iters == 0 {
            return Err(Error::Config("spectral_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Metrics for one gradient step `W^{(k)} → W^{(k+1)}`.
///
/// Loss, errors, gradients, flips and `‖x_L‖` describe `W^{(k)}`; distances
/// from initialization describe `W^{(k+1)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub loss: f64,
    pub surrogate: f64,
    pub train_err: f64,
    /// `h(W^{(k+1)}, W^{(k)})`.
    pub h: f64,
    /// `‖W_l^{(k+1)} − W_l^{(0)}‖_F` per layer.
    pub dist_from_init: Vec<f64>,
    /// `‖∇_{W_l} L_S(W^{(k)})‖_F` per layer.
    pub grad_norms: Vec<f64>,
    pub flip_fraction: f64,
    pub xl_min: f64,
    pub xl_max: f64,
    /// `‖g_j‖₂` for each column `j` of the output-layer gradient.
    pub output_column_norms: Vec<f64>,
    /// Output-layer units whose activation bit differs from init on some sample.
    pub output_flips: usize,
}

impl TrajectoryRecord {
    pub fn max_dist(&self) -> f64 {
        self.dist_from_init.iter().copied().fold(0.0, f64::max)
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 12] = [
    "step",
    "loss",
    "surrogate",
    "train_err",
    "h_k",
    "max_dist_init",
    "grad_norm_first",
    "grad_norm_mid_max",
    "grad_norm_last",
    "flip_frac",
    "xl_min",
    "xl_max",
];

/// State of one evaluated iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub loss: f64,
    pub surrogate: f64,
    pub train_err: f64,
    pub dist_from_init: Vec<f64>,
    pub flip_fraction: f64,
}

impl Snapshot {
    pub fn max_dist(&self) -> f64 {
        self.dist_from_init.iter().copied().fold(0.0, f64::max)
    }
}

/// `h(Ŵ, W̃) = ‖Ŵ_1 − W̃_1‖₂ + θ Σ_{l=2}^{L} ‖Ŵ_l − W̃_l‖₂ + ‖Ŵ_{L+1} − W̃_{L+1}‖₂`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct StepDistance<T>(pub T);

/// Combines per-layer spectral norms with the scale `θ^{𝟙(2≤l≤L)}`.
pub fn weighted_norm_sum<T: Scalar>(params: &NetworkParams<T>, norms: &[T]) -> T {
    norms
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (idx, &n)| acc + params.layer_scale(idx + 1) * n)
}

pub fn step_distance<T: Scalar>(a: &NetworkParams<T>, b: &NetworkParams<T>) -> Result<StepDistance<T>> {
    step_distance_with(a, b, 500, T::of(1e-10))
}

pub fn step_distance_with<T: Scalar>(a: &NetworkParams<T>, b: &NetworkParams<T>, iters: usize, tol: T) -> Result<StepDistance<T>> {
    a.check_same_shape(b)?;
    let norms = a
        .weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| spectral_norm(&x.sub(y), iters, tol).map(|e| e.value))
        .collect::<Result<Vec<T>>>()?;
    Ok(StepDistance(weighted_norm_sum(a, &norms)))
}

/// The initialization a trajectory is measured against.
#[derive(Clone, Debug)]
pub struct Anchor<T> {
    pub params: NetworkParams<T>,
    pub trace: BatchTrace<T>,
}

impl<T: Scalar> Anchor<T> {
    pub fn new(init: &NetworkParams<T>, batch: &LabeledBatch<T>) -> Result<Self> {
        let trace = crate::model::forward_batch(init, &batch.inputs)?;
        Ok(Anchor {
            params: init.clone(),
            trace,
        })
    }

    /// Units of layer `l` whose bit differs from init on at least one sample.
    pub fn flipped_units(&self, trace: &BatchTrace<T>, l: usize) -> usize {
        let (a, b) = (&self.trace.preactivations[l - 1], &trace.preactivations[l - 1]);
        (0..a.cols())
            .filter(|&j| (0..a.rows()).any(|i| (a[(i, j)] > T::zero()) != (b[(i, j)] > T::zero())))
            .count()
    }

    /// Fraction of pattern bits (over samples and layers) differing from init.
    pub fn flip_fraction(&self, trace: &BatchTrace<T>) -> f64 {
        let flips: usize = self.trace.flip_counts(trace).iter().sum();
        let total: usize = self.trace.preactivations.iter().map(|z| z.rows() * z.cols()).sum();
        flips as f64 / total.max(1) as f64
    }
}

fn apply_update<T: Scalar>(params: &NetworkParams<T>, grads: &GradientSet<T>, eta: T) -> Result<NetworkParams<T>> {
    let weights: Vec<Matrix<T>> = params
        .weights()
        .iter()
        .zip(&grads.layers)
        .map(|(w, g)| {
            let mut next = w.clone();
            next.axpy(-eta, g);
            next
        })
        .collect();
    params.with_weights(weights)
}

fn xl_range<T: Scalar>(params: &NetworkParams<T>, trace: &BatchTrace<T>) -> (f64, f64) {
    let xl = &trace.activations[params.depth()];
    (0..xl.rows())
        .map(|i| norm2(xl.row(i)).as_f64())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// `η · (‖G_1‖₂ + θ Σ ‖G_l‖₂ + ‖G_{L+1}‖₂)`.
pub fn predicted_step_distance<T: Scalar>(
    params: &NetworkParams<T>,
    grads: &GradientSet<T>,
    eta: T,
    iters: usize,
    tol: T,
) -> Result<T> {
    let norms = grads.spectral_norms(iters, tol)?;
    Ok(eta * weighted_norm_sum(params, &norms))
}

fn record_from<T: Scalar>(
    step: usize,
    params: &NetworkParams<T>,
    next: &NetworkParams<T>,
    eval: &BatchEvaluation<T>,
    anchor: &Anchor<T>,
    cfg: &TrainConfig,
) -> Result<TrajectoryRecord> {
    let h = predicted_step_distance(params, &eval.grads, T::of(cfg.eta), cfg.spectral_iters, T::of(cfg.spectral_tol))?;
    let (xl_min, xl_max) = xl_range(params, &eval.trace);
    let last = eval.grads.layer(params.layers());
    let output_column_norms = (0..last.cols()).map(|j| norm2(&last.col(j)).as_f64()).collect();
    Ok(TrajectoryRecord {
        step,
        loss: eval.loss.total.as_f64(),
        surrogate: eval.surrogate.empirical.as_f64(),
        train_err: eval.train_error.as_f64(),
        h: h.as_f64(),
        dist_from_init: next.layer_distances(&anchor.params)?.into_iter().map(Scalar::as_f64).collect(),
        grad_norms: eval.grads.frobenius_norms().into_iter().map(Scalar::as_f64).collect(),
        flip_fraction: anchor.flip_fraction(&eval.trace),
        xl_min,
        xl_max,
        output_column_norms,
        output_flips: anchor.flipped_units(&eval.trace, params.layers()),
    })
}

/// One step of `W_l ← W_l − η ∇_{W_l} L_S(W)`, recorded as step `step`.
pub fn gd_step<T: Scalar>(
    params: &NetworkParams<T>,
    batch: &LabeledBatch<T>,
    eta: f64,
    anchor: &Anchor<T>,
    step: usize,
) -> Result<(NetworkParams<T>, TrajectoryRecord)> {
    let cfg = TrainConfig {
        eta,
        ..TrainConfig::default()
    };
    let eval = evaluate_batch(params, batch)?;
    if !eval.grads.is_finite() || !eval.loss.total.is_finite() {
        return Err(Error::Divergence { step });
    }
    let next = apply_update(params, &eval.grads, T::of(eta))?;
    let rec = record_from(step, params, &next, &eval, anchor, &cfg)?;
    Ok((next, rec))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub records: Vec<TrajectoryRecord>,
    /// Number of gradient steps actually taken.
    pub steps: usize,
    /// Index `k*` of the iterate with the smallest surrogate.
    pub best_step: usize,
    pub best_surrogate: f64,
    /// The last iterate, evaluated.
    pub last: Snapshot,
    pub stopped_early: bool,
    pub tau_breach_step: Option<usize>,
    /// `Σ_k ‖∇_{W_l} L_S(W^{(k)})‖_F` per layer over the steps taken.
    pub cumulative_grad_norms: Vec<f64>,
}

fn should_stop<T: Scalar>(eval: &BatchEvaluation<T>, cfg: &TrainConfig) -> bool {
    eval.surrogate.empirical.as_f64() <= cfg.stop_surrogate
        && (!cfg.stop_requires_separation || eval.train_error == T::zero())
}

/// Runs gradient descent from `init` for at most `cfg.max_steps` steps.
pub fn train<T: Scalar>(init: &NetworkParams<T>, batch: &LabeledBatch<T>, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let anchor = Anchor::new(init, batch)?;
    let eta = T::of(cfg.eta);
    let mut params = init.clone();
    let mut records = Vec::new();
    let mut cumulative = vec![0.0; init.layers()];
    let mut best = (0usize, f64::INFINITY);
    let mut tau_breach = None;
    let mut stopped_early = false;
    let mut step = 0usize;
    let last_eval = loop {
        let eval = evaluate_batch(&params, batch)?;
        if !eval.grads.is_finite() || !eval.loss.total.is_finite() {
            return Err(Error::Divergence { step });
        }
        let s = eval.surrogate.empirical.as_f64();
        if s < best.1 {
            best = (step, s);
        }
        if should_stop(&eval, cfg) {
            stopped_early = step < cfg.max_steps;
            break eval;
        }
        if step == cfg.max_steps {
            break eval;
        }
        let next = apply_update(&params, &eval.grads, eta)?;
        for (c, g) in cumulative.iter_mut().zip(eval.grads.frobenius_norms()) {
            *c += g.as_f64();
        }
        let dists = next.layer_distances(&anchor.params)?;
        let max_dist = dists.iter().fold(T::zero(), |m, &d| m.max(d)).as_f64();
        if let (Some(tau), None) = (cfg.tau_budget, tau_breach) {
            if max_dist > tau {
                warn!("iterate {} left the tau = {tau} neighborhood (max distance {max_dist})", step + 1);
                tau_breach = Some(step + 1);
            }
        }
        if !cfg.skip_records && step % cfg.record_every == 0 {
            records.push(record_from(step, &params, &next, &eval, &anchor, cfg)?);
        }
        params = next;
        step += 1;
    };
    let last = Snapshot {
        step,
        loss: last_eval.loss.total.as_f64(),
        surrogate: last_eval.surrogate.empirical.as_f64(),
        train_err: last_eval.train_error.as_f64(),
        dist_from_init: params.layer_distances(&anchor.params)?.into_iter().map(Scalar::as_f64).collect(),
        flip_fraction: anchor.flip_fraction(&last_eval.trace),
    };
    Ok(TrainOutcome {
        params,
        records,
        steps: step,
        best_step: best.0,
        best_surrogate: best.1,
        last,
        stopped_early,
        tau_breach_step: tau_breach,
        cumulative_grad_norms: cumulative,
    })
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn write_trajectory_csv<W: Write>(records: &[TrajectoryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in records {
        let layers = r.grad_norms.len();
        let mid_max = if layers > 2 {
            r.grad_norms[1..layers - 1].iter().copied().fold(0.0, f64::max)
        } else {
            0.0
        };
        w.write_record([
            r.step.to_string(),
            fmt(r.loss),
            fmt(r.surrogate),
            fmt(r.train_err),
            fmt(r.h),
            fmt(r.max_dist()),
            fmt(r.grad_norms[0]),
            fmt(mid_max),
            fmt(r.grad_norms[layers - 1]),
            fmt(r.flip_fraction),
            fmt(r.xl_min),
            fmt(r.xl_max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The `summary.json` payload written next to `trajectory.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary<C> {
    pub config: C,
    pub steps: usize,
    pub best_step: usize,
    pub best_surrogate: f64,
    pub tau_breach_step: Option<usize>,
    pub stopped_early: bool,
    pub last: Snapshot,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn summary<C: Clone>(&self, config: &C) -> TrainSummary<C> {
        TrainSummary {
            config: config.clone(),
            steps: self.steps,
            best_step: self.best_step,
            best_surrogate: self.best_surrogate,
            tau_breach_step: self.tau_breach_step,
            stopped_early: self.stopped_early,
            last: self.last.clone(),
        }
    }
}
