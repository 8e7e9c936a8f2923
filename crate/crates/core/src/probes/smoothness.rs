use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{fit_upper, loglog_slope, DetailTable, PerturbationBall, ProbeReport, Sense};
use crate::error::{Error, Result};
use crate::lossgrad::{xent, xent_deriv, LabeledBatch};
use crate::model::{directional_derivative, forward_batch, BatchTrace, NetworkParams};
use crate::numkit::{distance, mean, pairwise_sum, spectral_norm, Matrix, RngState};
use crate::scalar::Scalar;

/// `Σ_{r ≤ l} θ^{𝟙(r skip)} ‖Ŵ_r − W̃_r‖₂`: the part of `h` that reaches `x_l`.
pub fn layered_distance_expr<T: Scalar>(params: &NetworkParams<T>, spectral: &[f64], l: usize) -> f64 {
    (1..=l).map(|r| params.layer_scale(r).as_f64() * spectral[r - 1]).sum()
}

/// `w·τ^{1/3}·√(m log m)·h + √m·h²`.
pub fn semismooth_expr(tau: f64, width: usize, h: f64, weight: f64) -> f64 {
    let m = width as f64;
    weight * tau.cbrt() * (m * m.ln()).sqrt() * h + m.sqrt() * h * h
}

fn spectral_norms<T: Scalar>(a: &NetworkParams<T>, b: &NetworkParams<T>, iters: usize, tol: f64) -> Result<Vec<f64>> {
    a.weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| {
            let d = x.sub(y);
            if d.max_abs() == T::zero() {
                Ok(0.0)
            } else {
                spectral_norm(&d, iters, T::of(tol)).map(|e| e.value.as_f64())
            }
        })
        .collect()
}

fn deltas<T: Scalar>(a: &NetworkParams<T>, b: &NetworkParams<T>) -> Vec<Matrix<T>> {
    a.weights().iter().zip(b.weights()).map(|(x, y)| x.sub(y)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightLipschitzConfig {
    pub tau_grid: Vec<f64>,
    pub draws: usize,
    pub seed: RngState,
    /// Also measure `‖x̂_l − x̃_l‖` against the layered distance (needs spectral norms).
    pub lipschitz: bool,
    pub power_iters: usize,
    pub power_tol: f64,
}

impl Default for WeightLipschitzConfig {
    fn default() -> Self {
        WeightLipschitzConfig {
            tau_grid: vec![0.01, 0.03, 0.1, 0.3],
            draws: 10,
            seed: RngState::root(0),
            lipschitz: true,
            power_iters: 300,
            power_tol: 1e-4,
        }
    }
}

/// Activation distances and pattern flips between pairs `Ŵ, W̃` drawn from
/// the `τ`-ball around `center`, over a grid of radii.
pub fn probe_weight_lipschitz_and_flips<T: Scalar>(
    center: &NetworkParams<T>,
    inputs: &Matrix<T>,
    cfg: &WeightLipschitzConfig,
) -> Result<ProbeReport> {
    if cfg.tau_grid.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::Precondition("ball radii must lie in [0, 1]".into()));
    }
    let m = center.shape().width as f64;
    let n = inputs.rows() as f64;
    let layers = center.layers();
    let units: f64 = (1..=layers).map(|l| center.shape().layer_dims(l).1 as f64).sum();
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    for &tau in &cfg.tau_grid {
        let ball = PerturbationBall::new(center, tau, cfg.seed)?;
        let mut frac_sum = 0.0;
        for t in 0..cfg.draws as u64 {
            let (a, b) = (ball.sample(2 * t)?, ball.sample(2 * t + 1)?);
            let (ta, tb) = (forward_batch(&a, inputs)?, forward_batch(&b, inputs)?);
            let flips: usize = ta.flip_counts(&tb).iter().sum();
            let per_layer = flips as f64 / (n * layers as f64);
            let fraction = flips as f64 / (n * units);
            frac_sum += fraction;
            let (lip, h) = if cfg.lipschitz {
                let spec = spectral_norms(&a, &b, cfg.power_iters, cfg.power_tol)?;
                let mut worst = 0.0f64;
                for l in 1..=layers {
                    let expr = layered_distance_expr(center, &spec, l);
                    if expr == 0.0 {
                        continue;
                    }
                    for i in 0..inputs.rows() {
                        worst = worst.max(distance(ta.activation(l, i), tb.activation(l, i)).as_f64() / expr);
                    }
                }
                (worst, layered_distance_expr(center, &spec, layers))
            } else {
                (f64::NAN, f64::NAN)
            };
            rows.push((tau, t, per_layer, fraction, lip, h));
        }
        curve.push((tau, frac_sum / cfg.draws.max(1) as f64));
    }
    let c3 = fit_upper(rows.iter().map(|r| (r.2, m * r.0.powf(2.0 / 3.0))));
    let c2 = fit_upper(rows.iter().filter(|r| r.4.is_finite()).map(|r| (r.4, 1.0)));
    let mut details = DetailTable::new(&["tau", "draw", "flip_fraction", "h"]);
    for &(tau, t, per_layer, fraction, lip, h) in &rows {
        let extras = [tau, t as f64, fraction, h];
        details.push("flips", per_layer, c3 * m * tau.powf(2.0 / 3.0), Sense::Upper, &extras);
        if cfg.lipschitz {
            details.push("lipschitz", lip, c2, Sense::Upper, &extras);
        }
    }
    let mut measured = BTreeMap::new();
    if let Some(s) = loglog_slope(&curve) {
        measured.insert("flip_slope".into(), s);
    }
    for &(tau, f) in &curve {
        measured.insert(format!("flip_fraction@{tau}"), f);
    }
    measured.insert("c3".into(), c3);
    if cfg.lipschitz {
        measured.insert("c2".into(), c2);
    }
    ProbeReport::new("weight_lipschitz_flips", cfg, rows.len(), c3, measured, details)
}

/// Both traces of a weight pair and the first-order expansion at `W̃`.
#[derive(Clone, Debug)]
pub struct TaylorPair<T> {
    /// `f_Ŵ(x_i) − f_W̃(x_i) − Σ_l tr[(Ŵ_l − W̃_l)ᵀ ∇_{W_l} f_W̃(x_i)]`.
    pub residuals: Vec<T>,
    /// `Σ_l tr[(Ŵ_l − W̃_l)ᵀ ∇_{W_l} f_W̃(x_i)]`.
    pub linear: Vec<T>,
    pub hat: BatchTrace<T>,
    pub tilde: BatchTrace<T>,
}

pub fn taylor_residuals<T: Scalar>(
    hat: &NetworkParams<T>,
    tilde: &NetworkParams<T>,
    inputs: &Matrix<T>,
) -> Result<TaylorPair<T>> {
    hat.check_same_shape(tilde)?;
    let th = forward_batch(hat, inputs)?;
    let tt = forward_batch(tilde, inputs)?;
    let linear = directional_derivative(tilde, &tt, &deltas(hat, tilde))?;
    let residuals = (0..inputs.rows())
        .map(|i| th.outputs[i] - tt.outputs[i] - linear[i])
        .collect();
    Ok(TaylorPair {
        residuals,
        linear,
        hat: th,
        tilde: tt,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemismoothnessConfig {
    pub tau: f64,
    pub draws: usize,
    pub seed: RngState,
    pub power_iters: usize,
    pub power_tol: f64,
    /// Bound on `|R|` for the `Ŵ = W̃` control.
    pub control_tol: f64,
}

impl Default for SemismoothnessConfig {
    fn default() -> Self {
        SemismoothnessConfig {
            tau: 0.1,
            draws: 200,
            seed: RngState::root(0),
            power_iters: 300,
            power_tol: 1e-4,
            control_tol: 1e-12,
        }
    }
}

fn loss_terms<T: Scalar>(outputs: &[T], batch: &LabeledBatch<T>) -> (f64, f64, Vec<T>) {
    let n = T::of(batch.len() as f64);
    let margins: Vec<T> = outputs.iter().enumerate().map(|(i, &f)| batch.label(i) * f).collect();
    let loss: Vec<T> = margins.iter().map(|&z| xent(z)).collect();
    let surr: Vec<T> = margins.iter().map(|&z| -xent_deriv(z)).collect();
    let coefs = margins
        .iter()
        .enumerate()
        .map(|(i, &z)| xent_deriv(z) * batch.label(i) / n)
        .collect();
    (mean(&loss).as_f64(), mean(&surr).as_f64(), coefs)
}

/// First-order Taylor residuals of `f` and `L_S` between ball pairs, against
/// `τ^{1/3}√(m log m)·h + √m·h²` (the `L_S` version weights the first term by `𝓔_S(W̃)`).
pub fn probe_semismoothness<T: Scalar>(
    center: &NetworkParams<T>,
    batch: &LabeledBatch<T>,
    cfg: &SemismoothnessConfig,
) -> Result<ProbeReport> {
    if !(0.0..=1.0).contains(&cfg.tau) {
        return Err(Error::Precondition(format!("ball radius must lie in [0, 1], got {}", cfg.tau)));
    }
    let ball = PerturbationBall::new(center, cfg.tau, cfg.seed)?;
    let width = center.shape().width;
    let layers = center.layers();
    let mut rows = Vec::new();
    for t in 0..cfg.draws as u64 {
        let (hat, tilde) = (ball.sample(2 * t)?, ball.sample(2 * t + 1)?);
        let spec = spectral_norms(&hat, &tilde, cfg.power_iters, cfg.power_tol)?;
        let h = layered_distance_expr(center, &spec, layers);
        let pair = taylor_residuals(&hat, &tilde, &batch.inputs)?;
        let r_max = pair.residuals.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let (lh, _, _) = loss_terms(&pair.hat.outputs, batch);
        let (lt, st, coefs) = loss_terms(&pair.tilde.outputs, batch);
        let weighted: Vec<T> = coefs.iter().zip(&pair.linear).map(|(&c, &d)| c * d).collect();
        let r_loss = lh - lt - pairwise_sum(&weighted).as_f64();
        let flips: usize = pair.hat.flip_counts(&pair.tilde).iter().sum();
        rows.push((t, h, r_max, r_loss, st, flips));
    }
    let expr_f = |h: f64| semismooth_expr(cfg.tau, width, h, 1.0);
    let expr_l = |h: f64, s: f64| semismooth_expr(cfg.tau, width, h, s);
    let c_out = fit_upper(rows.iter().map(|r| (r.2, expr_f(r.1))));
    let c_loss = fit_upper(rows.iter().map(|r| (r.3, expr_l(r.1, r.4))));
    let mut details = DetailTable::new(&["draw", "h", "expr", "flips"]);
    for &(t, h, rf, rl, st, flips) in &rows {
        let (ef, el) = (expr_f(h), expr_l(h, st));
        details.push("output", rf, c_out * ef, Sense::Upper, &[t as f64, h, ef, flips as f64]);
        details.push("loss", rl, c_loss * el, Sense::Upper, &[t as f64, h, el, flips as f64]);
    }
    let same = ball.sample(0)?;
    let control = taylor_residuals(&same, &same, &batch.inputs)?;
    let control_max = control.residuals.iter().map(|v| v.abs().as_f64()).fold(0.0, f64::max);
    details.push("control", control_max, cfg.control_tol, Sense::Upper, &[-1.0, 0.0, 0.0, 0.0]);
    let mut measured = BTreeMap::new();
    measured.insert("c_output".into(), c_out);
    measured.insert("c_loss".into(), c_loss);
    measured.insert("control_residual".into(), control_max);
    measured.insert(
        "max_output_residual".into(),
        rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max),
    );
    ProbeReport::new("semismoothness", cfg, rows.len(), c_out, measured, details)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkShape;

    fn net() -> NetworkParams<f64> {
        NetworkParams::init_gaussian(RngState::root(31), NetworkShape::residual(5, 3, 24, 24)).unwrap()
    }

    fn inputs(n: usize) -> Matrix<f64> {
        let mut rng = RngState::root(32).rng();
        Matrix::from_rows(&(0..n).map(|_| rng.sphere(5)).collect::<Vec<Vec<f64>>>()).unwrap()
    }

    #[test]
    fn equal_weights_have_zero_residual() {
        let p = net();
        let pair = taylor_residuals(&p, &p, &inputs(8)).unwrap();
        assert!(pair.residuals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expr_examples() {
        assert_eq!(semismooth_expr(0.5, 16, 0.0, 1.0), 0.0);
        let m = 64.0f64;
        let want = 0.125f64.cbrt() * (m * m.ln()).sqrt() * 0.2 + 8.0 * 0.04;
        assert!((semismooth_expr(0.125, 64, 0.2, 1.0) - want).abs() < 1e-12);
    }

    #[test]
    fn radius_above_one_is_rejected() {
        let p = net();
        let cfg = WeightLipschitzConfig {
            tau_grid: vec![1.5],
            ..Default::default()
        };
        assert!(probe_weight_lipschitz_and_flips(&p, &inputs(4), &cfg).is_err());
    }

    #[test]
    fn zero_radius_gives_no_flips() {
        let p = net();
        let cfg = WeightLipschitzConfig {
            tau_grid: vec![0.0],
            draws: 2,
            ..Default::default()
        };
        let r = probe_weight_lipschitz_and_flips(&p, &inputs(4), &cfg).unwrap();
        assert!(r.details.labeled("flips").all(|row| row.measured == 0.0));
    }
}
