use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::ball::project;
use super::{fit_upper, DetailTable, ProbeReport, Sense};
use crate::error::{Error, Result};
use crate::lossgrad::{weighted_output_gradient, LabeledBatch};
use crate::model::{directional_derivative, forward_batch, NetworkParams};
use crate::numkit::{pairwise_sum, Matrix, RngState};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RademacherConfig {
    pub tau: f64,
    pub xi_draws: usize,
    pub ascent_steps: usize,
    /// Per-layer ascent step as a fraction of `τ`.
    pub step_fraction: f64,
    pub seed: RngState,
}

impl Default for RademacherConfig {
    fn default() -> Self {
        RademacherConfig {
            tau: 0.1,
            xi_draws: 16,
            ascent_steps: 50,
            step_fraction: 0.1,
            seed: RngState::root(0),
        }
    }
}

/// `τ^{4/3}·√(m log m) + τ·√m/√n`.
pub fn rademacher_bound_expr(tau: f64, width: usize, n: usize) -> f64 {
    let m = width as f64;
    tau.powf(4.0 / 3.0) * (m * m.ln()).sqrt() + tau * m.sqrt() / (n as f64).sqrt()
}

struct Ascent {
    best: f64,
    last: f64,
    gap: f64,
}

/// `(1/n) Σ ξ_i (f_W(x_i) − f_{W⁰}(x_i))`.
fn correlation<T: Scalar>(xi: &[T], outputs: &[T], base: &[T]) -> T {
    let n = T::of(xi.len() as f64);
    let terms: Vec<T> = xi
        .iter()
        .zip(outputs.iter().zip(base))
        .map(|(&s, (&f, &f0))| s * (f - f0))
        .collect();
    pairwise_sum(&terms) / n
}

fn ascend<T: Scalar>(
    center: &NetworkParams<T>,
    inputs: &Matrix<T>,
    base: &[T],
    xi: &[T],
    cfg: &RademacherConfig,
) -> Result<Option<Ascent>> {
    let tau = T::of(cfg.tau);
    let step = T::of(cfg.tau * cfg.step_fraction);
    let n = T::of(xi.len() as f64);
    let coefs: Vec<T> = xi.iter().map(|&s| s / n).collect();
    let mut w = center.clone();
    let mut best = T::zero();
    let mut trace = forward_batch(&w, inputs)?;
    for _ in 0..cfg.ascent_steps {
        let grads = weighted_output_gradient(&w, &trace, &coefs);
        if !grads.is_finite() {
            return Ok(None);
        }
        for l in 1..=w.layers() {
            let g = grads.layer(l);
            let norm = g.frobenius_norm();
            if norm > T::zero() {
                w.weight_mut(l).axpy(step / norm, g);
            }
            let delta = w.weight(l).sub(center.weight(l));
            let dist = delta.frobenius_norm();
            if dist > tau {
                *w.weight_mut(l) = project(center.weight(l), delta.scaled(tau / dist), tau);
            }
        }
        trace = forward_batch(&w, inputs)?;
        let obj = correlation(xi, &trace.outputs, base);
        if !obj.is_finite() {
            return Ok(None);
        }
        best = best.max(obj);
    }
    let last = correlation(xi, &trace.outputs, base);
    let center_trace = forward_batch(center, inputs)?;
    let deltas: Vec<Matrix<T>> = w.weights().iter().zip(center.weights()).map(|(a, b)| a.sub(b)).collect();
    let lin = directional_derivative(center, &center_trace, &deltas)?;
    let gap = (0..xi.len())
        .map(|i| (trace.outputs[i] - base[i] - lin[i]).abs().as_f64())
        .fold(0.0, f64::max);
    Ok(Some(Ascent {
        best: best.as_f64(),
        last: last.as_f64(),
        gap,
    }))
}

/// Lower estimate of the empirical Rademacher complexity of the `τ`-ball
/// around `center`, by projected gradient ascent per sign vector.
///
/// Each draw maximizes `(1/n) Σ ξ_i (f_W(x_i) − f_{W⁰}(x_i))`; centering at
/// `W⁰` leaves the expectation over `ξ` unchanged and makes `τ = 0` give 0.
pub fn rademacher_estimate<T: Scalar>(
    center: &NetworkParams<T>,
    batch: &LabeledBatch<T>,
    cfg: &RademacherConfig,
) -> Result<ProbeReport> {
    if !(cfg.tau >= 0.0) || cfg.xi_draws == 0 {
        return Err(Error::Config("rademacher needs tau >= 0 and at least one sign draw".into()));
    }
    let inputs = &batch.inputs;
    let n = inputs.rows();
    let base = forward_batch(center, inputs)?.outputs;
    let expr = rademacher_bound_expr(cfg.tau, center.shape().width, n);
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for r in 0..cfg.xi_draws {
        let mut rng = cfg.seed.child(r as u64).rng();
        let xi: Vec<T> = (0..n).map(|_| rng.sign()).collect();
        match ascend(center, inputs, &base, &xi, cfg)? {
            Some(a) => kept.push((r, a)),
            None => {
                warn!("rademacher ascent diverged for sign draw {r}; dropped");
                dropped += 1;
            }
        }
    }
    let k = kept.len().max(1) as f64;
    let estimate = kept.iter().map(|(_, a)| a.best).sum::<f64>() / k;
    let var = kept.iter().map(|(_, a)| (a.best - estimate).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    let fitted = fit_upper(kept.iter().map(|(_, a)| (a.best, expr)));
    let mut details = DetailTable::new(&["draw", "final", "linearization_gap"]);
    for (r, a) in &kept {
        details.push("xi", a.best, fitted * expr, Sense::Upper, &[*r as f64, a.last, a.gap]);
    }
    let mut measured = BTreeMap::new();
    measured.insert("estimate".into(), estimate);
    measured.insert("std_error".into(), (var / k).sqrt());
    measured.insert("expr".into(), expr);
    measured.insert("c2".into(), if expr > 0.0 { estimate / expr } else { 0.0 });
    measured.insert("max_linearization_gap".into(), kept.iter().map(|(_, a)| a.gap).fold(0.0, f64::max));
    measured.insert("dropped".into(), dropped as f64);
    ProbeReport::new("rademacher", cfg, kept.len(), fitted, measured, details)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkShape;

    fn setup() -> (NetworkParams<f64>, LabeledBatch<f64>) {
        let p = NetworkParams::init_gaussian(RngState::root(41), NetworkShape::residual(4, 2, 16, 16)).unwrap();
        let mut rng = RngState::root(42).rng();
        let xs = Matrix::from_rows(&(0..12).map(|_| rng.sphere(4)).collect::<Vec<Vec<f64>>>()).unwrap();
        let labels = (0..12).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        (p, LabeledBatch::new(xs, labels).unwrap())
    }

    #[test]
    fn zero_radius_gives_exactly_zero() {
        let (p, b) = setup();
        let cfg = RademacherConfig {
            tau: 0.0,
            xi_draws: 3,
            ascent_steps: 5,
            ..Default::default()
        };
        let r = rademacher_estimate(&p, &b, &cfg).unwrap();
        assert_eq!(r.get("estimate"), Some(0.0));
        assert_eq!(r.get("max_linearization_gap"), Some(0.0));
    }

    #[test]
    fn ascent_stays_in_ball_and_is_nonnegative() {
        let (p, b) = setup();
        let cfg = RademacherConfig {
            tau: 0.2,
            xi_draws: 2,
            ascent_steps: 10,
            ..Default::default()
        };
        let r = rademacher_estimate(&p, &b, &cfg).unwrap();
        assert!(r.get("estimate").unwrap() > 0.0);
        assert!(r.details.rows.iter().all(|row| row.measured >= 0.0));
    }

    #[test]
    fn expr_example() {
        let m = 256.0f64;
        let want = 0.5f64.powf(4.0 / 3.0) * (m * m.ln()).sqrt() + 0.5 * 16.0 / 10.0;
        assert!((rademacher_bound_expr(0.5, 256, 100) - want).abs() < 1e-12);
    }
}
