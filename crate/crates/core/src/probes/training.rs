use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use super::{spread, DetailTable, ProbeReport, Sense};
use crate::data::{dataset_from_root, MarginDataset};
use crate::error::{Error, Result};
use crate::lossgrad::{batch_loss, LabeledBatch};
use crate::model::{forward_batch, interlayer_norms_batch, Arch, NetworkParams, NetworkShape};
use crate::numkit::{Matrix, RngState, Substream};
use crate::scalar::Scalar;
use crate::trainer::{train, TrainConfig, TrajectoryRecord};

/// `‖∇_{W_l} L_S‖_F / (scale·√m·𝓔_S)` where `scale` is `θ` on skip layers and 1 elsewhere.
pub fn gradient_upper_ratio(grad_norm: f64, scale: f64, width: usize, surrogate: f64) -> f64 {
    grad_norm / (scale * (width as f64).sqrt() * surrogate)
}

/// `‖∇_{W_{L+1}} L_S‖_F² / (m_{L+1}·γ⁴·𝓔_S²)`.
pub fn gradient_lower_ratio(grad_norm_last: f64, last_width: usize, gamma: f64, surrogate: f64) -> f64 {
    grad_norm_last * grad_norm_last / (last_width as f64 * gamma.powi(4) * surrogate * surrogate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoundsConfig {
    /// Output-layer columns with `‖g_j‖² ≥ γ²𝓔_S²·column_threshold` are counted in `|A|`.
    pub column_threshold: f64,
}

impl Default for GradientBoundsConfig {
    fn default() -> Self {
        GradientBoundsConfig {
            column_threshold: 1.0 / 134.0,
        }
    }
}

/// Gradient norms along a recorded trajectory against `θ^{𝟙}√m·𝓔_S` (upper)
/// and `m_{L+1}γ⁴𝓔_S²` (lower, output layer).
///
/// `gamma` is the dataset's margin certificate.
pub fn probe_gradient_bounds(
    records: &[TrajectoryRecord],
    shape: &NetworkShape,
    gamma: f64,
    cfg: &GradientBoundsConfig,
) -> Result<ProbeReport> {
    if records.is_empty() {
        return Err(Error::Precondition("gradient bounds need a nonempty trajectory".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::Precondition(format!("gradient bounds need gamma > 0, got {gamma}")));
    }
    let layers = shape.layers();
    let skip = |l: usize| shape.arch == Arch::Residual && (2..=shape.depth).contains(&l);
    let mut details = DetailTable::new(&["step", "layer", "surrogate", "active_columns", "output_flips"]);
    let mut up_max = 0.0f64;
    let mut up_mid_raw = 0.0f64;
    let mut low_min = f64::INFINITY;
    let mut active_min = usize::MAX;
    for r in records {
        if r.grad_norms.len() != layers {
            return Err(Error::DimensionMismatch {
                context: "gradient bounds record",
                expected: layers,
                found: r.grad_norms.len(),
            });
        }
        let s = r.surrogate;
        let (mut best, mut arg) = (0.0f64, 1usize);
        for (i, &g) in r.grad_norms.iter().enumerate() {
            let l = i + 1;
            let scale = if skip(l) { shape.theta } else { 1.0 };
            let ratio = gradient_upper_ratio(g, scale, shape.width, s);
            if ratio > best || ratio.is_nan() {
                best = ratio;
                arg = l;
            }
            if skip(l) {
                up_mid_raw = up_mid_raw.max(gradient_upper_ratio(g, 1.0, shape.width, s));
            }
        }
        let cut = gamma * gamma * s * s * cfg.column_threshold;
        let active = r.output_column_norms.iter().filter(|&&c| c * c >= cut).count();
        active_min = active_min.min(active);
        let low = gradient_lower_ratio(r.grad_norms[layers - 1], shape.last_width, gamma, s);
        let step = r.step as f64;
        let extras = [step, arg as f64, s, active as f64, r.output_flips as f64];
        details.push("upper", best, f64::MAX, Sense::Upper, &extras);
        let extras = [step, layers as f64, s, active as f64, r.output_flips as f64];
        details.push("lower", low, f64::MIN_POSITIVE, Sense::Lower, &extras);
        up_max = up_max.max(best);
        low_min = low_min.min(low);
    }
    let mut measured = BTreeMap::new();
    measured.insert("c_upper".into(), up_max);
    measured.insert("c_lower".into(), low_min);
    measured.insert("c_upper_mid_without_theta".into(), up_mid_raw);
    measured.insert("min_active_columns".into(), active_min as f64);
    ProbeReport::new("gradient_bounds", cfg, records.len(), up_max, measured, details)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossAtInitConfig {
    /// Failure probability `δ` in `√(log(n/δ))`.
    pub delta: f64,
}

impl Default for LossAtInitConfig {
    fn default() -> Self {
        LossAtInitConfig { delta: 0.05 }
    }
}

/// `L_S(W⁰)` against `√(log(n/δ))` and `max_i |f(x_i)|` against `√(log n)`.
pub fn probe_loss_at_init<T: Scalar>(
    params: &NetworkParams<T>,
    batch: &LabeledBatch<T>,
    cfg: &LossAtInitConfig,
) -> Result<ProbeReport> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {}", cfg.delta)));
    }
    let n = batch.len() as f64;
    let (loss, _) = batch_loss(params, batch)?;
    let outputs = forward_batch(params, &batch.inputs)?.outputs;
    let max_out = outputs.iter().map(|f| f.as_f64().abs()).fold(0.0, f64::max);
    let loss = loss.total.as_f64();
    let loss_expr = (n / cfg.delta).ln().sqrt();
    let out_expr = n.ln().sqrt();
    let c_loss = loss / loss_expr;
    let c_out = if out_expr > 0.0 { max_out / out_expr } else { 0.0 };
    let mut details = DetailTable::new(&["expr", "fitted"]);
    details.push("loss", loss, f64::MAX, Sense::Upper, &[loss_expr, c_loss]);
    details.push("max_output", max_out, f64::MAX, Sense::Upper, &[out_expr, c_out]);
    let mut measured = BTreeMap::new();
    measured.insert("loss".into(), loss);
    measured.insert("max_output".into(), max_out);
    measured.insert("c_loss".into(), c_loss);
    measured.insert("c_output".into(), c_out);
    ProbeReport::new("loss_at_init", cfg, batch.len(), c_loss, measured, details)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovConfig {
    /// Monte-Carlo allowance added to `2·𝓔`.
    pub band: f64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig { band: 0.03 }
    }
}

/// Held-out 0-1 error against twice the held-out surrogate.
pub fn probe_surrogate_markov<T: Scalar>(
    params: &NetworkParams<T>,
    heldout: &LabeledBatch<T>,
    cfg: &MarkovConfig,
) -> Result<ProbeReport> {
    if heldout.is_empty() {
        return Err(Error::Precondition("held-out set is empty".into()));
    }
    let outputs = forward_batch(params, &heldout.inputs)?.outputs;
    let wrong = (0..heldout.len())
        .filter(|&i| (heldout.label(i) * outputs[i]) <= T::zero())
        .count();
    let err = wrong as f64 / heldout.len() as f64;
    let (_, surr) = batch_loss(params, heldout)?;
    let surr = surr.empirical.as_f64();
    let mut details = DetailTable::new(&["surrogate", "band"]);
    details.push("markov", err, 2.0 * surr + cfg.band, Sense::Upper, &[surr, cfg.band]);
    let mut measured = BTreeMap::new();
    measured.insert("test_error".into(), err);
    measured.insert("test_surrogate".into(), surr);
    measured.insert("slack".into(), 2.0 * surr + cfg.band - err);
    let fitted = if surr > 0.0 { err / surr } else { 0.0 };
    ProbeReport::new("surrogate_markov", cfg, heldout.len(), fitted, measured, details)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSweepConfig {
    pub input_dim: usize,
    pub width: usize,
    pub last_width: usize,
    pub n: usize,
    pub gamma: f64,
    pub teacher_features: usize,
    pub depths: Vec<usize>,
    pub archs: Vec<Arch>,
    /// Step sizes tried per cell; the one reaching the threshold first wins.
    pub eta_grid: Vec<f64>,
    pub max_steps: usize,
    /// Surrogate level `𝓔_S` that counts as reached.
    pub threshold: f64,
    /// Samples used for the interlayer norms at init.
    pub norm_samples: usize,
    pub power_iters: usize,
    pub power_tol: f64,
    /// Largest allowed ratio of residual steps across depths.
    pub spread_limit: f64,
    pub seed: RngState,
}

impl Default for DepthSweepConfig {
    fn default() -> Self {
        DepthSweepConfig {
            input_dim: 10,
            width: 256,
            last_width: 256,
            n: 200,
            gamma: 0.1,
            teacher_features: 64,
            depths: vec![4, 16, 64],
            archs: vec![Arch::Residual, Arch::Plain],
            eta_grid: vec![0.0025, 0.005, 0.01],
            max_steps: 2000,
            threshold: 0.3,
            norm_samples: 20,
            power_iters: 100,
            power_tol: 1e-4,
            spread_limit: 2.0,
            seed: RngState::root(0),
        }
    }
}

impl DepthSweepConfig {
    /// The dataset every cell shares.
    pub fn dataset<T: Scalar>(&self) -> Result<MarginDataset<T>> {
        dataset_from_root(self.seed, self.input_dim, self.teacher_features, T::of(self.gamma), self.n)
    }

    /// Initial weights of one cell; both architectures share the draw at a given depth.
    pub fn init<T: Scalar>(&self, arch: Arch, depth: usize) -> Result<NetworkParams<T>> {
        let shape = NetworkShape::residual(self.input_dim, depth, self.width, self.last_width).with_arch(arch);
        NetworkParams::init_gaussian(self.seed.substream(Substream::Init).child(depth as u64), shape)
    }
}

/// Outcome of one `(arch, L)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthCell {
    pub arch: Arch,
    pub depth: usize,
    /// Winning step size, if any reached the threshold.
    pub eta: Option<f64>,
    /// Steps to reach the threshold under the winning step size.
    pub steps: Option<usize>,
    #[serde(with = "super::nonfinite")]
    pub final_surrogate: f64,
    #[serde(with = "super::nonfinite")]
    pub final_train_err: f64,
    /// Largest `‖H_2^L‖₂` over the norm samples at init.
    #[serde(with = "super::nonfinite")]
    pub interlayer_growth: f64,
    /// `(η, steps)` for every step size tried; `None` when the budget ran out.
    pub attempts: Vec<(f64, Option<usize>)>,
}

impl DepthCell {
    /// `arch@L`, the key used in reports and sweep directories.
    pub fn key(&self) -> String {
        format!("{}@{}", self.arch, self.depth)
    }
}

/// Trains one cell under every step size of the grid.
pub fn depth_cell<T: Scalar>(cfg: &DepthSweepConfig, batch: &LabeledBatch<T>, arch: Arch, depth: usize) -> Result<DepthCell> {
    if cfg.eta_grid.is_empty() {
        return Err(Error::Config("depth sweep needs at least one step size".into()));
    }
    let init = cfg.init::<T>(arch, depth)?;
    let k = cfg.norm_samples.min(batch.len()).max(1);
    let sub = Matrix::from_fn(k, batch.inputs.cols(), |i, j| batch.inputs.row(i)[j]);
    let growth = if depth >= 2 {
        let trace = forward_batch(&init, &sub)?;
        interlayer_norms_batch(&init, &trace, 2, depth, cfg.power_iters, T::of(cfg.power_tol))?
            .iter()
            .map(|e| e.value.as_f64())
            .fold(0.0, f64::max)
    } else {
        1.0
    };
    let mut attempts = Vec::new();
    let mut best: Option<(f64, usize, f64, f64)> = None;
    let mut fallback = (f64::NAN, f64::NAN);
    for &eta in &cfg.eta_grid {
        let tc = TrainConfig {
            eta,
            max_steps: cfg.max_steps,
            stop_surrogate: cfg.threshold,
            skip_records: true,
            seed: cfg.seed,
            ..TrainConfig::default()
        };
        match train(&init, batch, &tc) {
            Ok(out) => {
                let reached = out.last.surrogate <= cfg.threshold;
                let steps = reached.then_some(out.steps);
                attempts.push((eta, steps));
                if let Some(s) = steps {
                    if best.map_or(true, |b| s < b.1) {
                        best = Some((eta, s, out.last.surrogate, out.last.train_err));
                    }
                } else if best.is_none() && !(fallback.0 <= out.last.surrogate) {
                    fallback = (out.last.surrogate, out.last.train_err);
                }
            }
            Err(Error::Divergence { step }) => {
                info!("{arch}@{depth}: eta {eta} diverged at step {step}");
                attempts.push((eta, None));
            }
            Err(e) => return Err(e),
        }
    }
    let (eta, steps, final_surrogate, final_train_err) = match best {
        Some((e, s, fs, fe)) => (Some(e), Some(s), fs, fe),
        None => (None, None, fallback.0, fallback.1),
    };
    Ok(DepthCell {
        arch,
        depth,
        eta,
        steps,
        final_surrogate,
        final_train_err,
        interlayer_growth: growth,
        attempts,
    })
}

/// Assembles the sweep report from finished cells.
///
/// The residual row compares the largest and smallest steps-to-threshold
/// across depths with `spread_limit`; a residual cell that never reached the
/// threshold makes the spread infinite. Plain cells are reported only.
pub fn depth_sweep_report(cfg: &DepthSweepConfig, cells: &[DepthCell]) -> Result<ProbeReport> {
    let mut details = DetailTable::new(&["arch", "depth", "eta", "final_surrogate", "final_train_err", "interlayer_growth"]);
    let mut measured = BTreeMap::new();
    for c in cells {
        let steps = c.steps.map_or(f64::INFINITY, |s| s as f64);
        let arch = match c.arch {
            Arch::Residual => 0.0,
            Arch::Plain => 1.0,
        };
        details.push(
            "cell",
            steps,
            f64::NAN,
            Sense::Info,
            &[arch, c.depth as f64, c.eta.unwrap_or(f64::NAN), c.final_surrogate, c.final_train_err, c.interlayer_growth],
        );
        measured.insert(format!("steps:{}", c.key()), steps);
        measured.insert(format!("growth:{}", c.key()), c.interlayer_growth);
    }
    let residual: Vec<f64> = cells
        .iter()
        .filter(|c| c.arch == Arch::Residual)
        .map(|c| c.steps.map_or(f64::INFINITY, |s| s.max(1) as f64))
        .collect();
    if !residual.is_empty() {
        let s = spread(&residual);
        details.push("residual_spread", s, cfg.spread_limit, Sense::Upper, &[0.0, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN]);
        measured.insert("residual_spread".into(), s);
    }
    for p in cells.iter().filter(|c| c.arch == Arch::Plain) {
        if let Some(r) = cells.iter().find(|c| c.arch == Arch::Residual && c.depth == p.depth) {
            let ps = p.steps.map_or(f64::INFINITY, |s| s as f64);
            let rs = r.steps.map_or(f64::INFINITY, |s| s.max(1) as f64);
            let ratio = ps / rs;
            let extras = [1.0, p.depth as f64, f64::NAN, f64::NAN, f64::NAN, p.interlayer_growth / r.interlayer_growth];
            details.push("plain_ratio", ratio, f64::NAN, Sense::Info, &extras);
            measured.insert(format!("plain_ratio@{}", p.depth), ratio);
        }
    }
    let fitted = measured.get("residual_spread").copied().unwrap_or(f64::NAN);
    ProbeReport::new("depth_sweep", cfg, cells.len(), fitted, measured, details)
}

/// Trains every `(arch, L)` cell on a shared dataset and reports steps to the
/// surrogate threshold, final error and interlayer growth per cell.
pub fn depth_sweep<T: Scalar>(cfg: &DepthSweepConfig) -> Result<(ProbeReport, Vec<DepthCell>)> {
    let batch = cfg.dataset::<T>()?.to_batch();
    let mut cells = Vec::new();
    for &arch in &cfg.archs {
        for &depth in &cfg.depths {
            cells.push(depth_cell(cfg, &batch, arch, depth)?);
        }
    }
    Ok((depth_sweep_report(cfg, &cells)?, cells))
}
