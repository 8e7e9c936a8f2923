use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DetailTable, ProbeReport, Sense};
use crate::data::Teacher;
use crate::error::{Error, Result};
use crate::lossgrad::LabeledBatch;
use crate::model::{forward_batch, BatchTrace, NetworkParams};
use crate::numkit::{dot, normalize, RngState};
use crate::scalar::Scalar;

/// A unit vector in the first hidden layer's space.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparabilityDirection<T> {
    pub alpha: Vec<T>,
}

impl<T: Scalar> SeparabilityDirection<T> {
    /// `α_j ∝ c(√(m_1/2)·w_{1,j})`, where the teacher's coefficient at a point
    /// is that of its nearest feature by cosine similarity.
    pub fn from_teacher(teacher: &Teacher<T>, params: &NetworkParams<T>) -> Result<Self> {
        if teacher.input_dim() != params.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "separability teacher",
                expected: params.input_dim(),
                found: teacher.input_dim(),
            });
        }
        let w1 = params.weight(1);
        let m1 = w1.cols();
        let scale = T::of((m1 as f64 / 2.0).sqrt());
        let mut alpha: Vec<T> = (0..m1)
            .map(|j| {
                let u: Vec<T> = w1.col(j).into_iter().map(|w| w * scale).collect();
                teacher.coefficient_at(&u)
            })
            .collect();
        normalize(&mut alpha);
        Ok(SeparabilityDirection { alpha })
    }

    /// Uniform direction on the sphere.
    pub fn random(seed: RngState, dim: usize) -> Self {
        SeparabilityDirection {
            alpha: seed.rng().sphere(dim),
        }
    }

    /// `y_i ⟨α, x_{l,i}⟩` for every sample.
    pub fn margins(&self, trace: &BatchTrace<T>, batch: &LabeledBatch<T>, l: usize) -> Vec<f64> {
        (0..trace.len())
            .map(|i| (batch.label(i) * dot(&self.alpha, trace.activation(l, i))).as_f64())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityConfig {
    /// Required margin as a fraction of the teacher's `γ`.
    pub fraction: f64,
    pub control_seed: RngState,
}

impl Default for SeparabilityConfig {
    fn default() -> Self {
        SeparabilityConfig {
            fraction: 0.25,
            control_seed: RngState::root(0),
        }
    }
}

fn min_mean(v: &[f64]) -> (f64, f64) {
    (
        v.iter().copied().fold(f64::INFINITY, f64::min),
        v.iter().sum::<f64>() / v.len().max(1) as f64,
    )
}

/// Margins `min_i y_i⟨α, x_{l,i}⟩` of the teacher-built direction at every
/// hidden layer, next to a random-direction control.
pub fn probe_separability<T: Scalar>(
    teacher: &Teacher<T>,
    params: &NetworkParams<T>,
    batch: &LabeledBatch<T>,
    cfg: &SeparabilityConfig,
) -> Result<ProbeReport> {
    let alpha = SeparabilityDirection::from_teacher(teacher, params)?;
    let control = SeparabilityDirection::random(cfg.control_seed, alpha.alpha.len());
    let trace = forward_batch(params, &batch.inputs)?;
    let gamma = teacher.gamma.as_f64();
    let target = cfg.fraction * gamma;
    let mut details = DetailTable::new(&["layer", "mean", "negative"]);
    let mut per_layer = Vec::new();
    let mut control_min = f64::INFINITY;
    let mut control_mean = 0.0;
    for l in 1..=params.depth() {
        let m = alpha.margins(&trace, batch, l);
        let (lo, avg) = min_mean(&m);
        let neg = m.iter().filter(|&&v| v <= 0.0).count() as f64;
        details.push("alpha", lo, target, Sense::Lower, &[l as f64, avg, neg]);
        let c = control.margins(&trace, batch, l);
        let (clo, cavg) = min_mean(&c);
        let cneg = c.iter().filter(|&&v| v <= 0.0).count() as f64;
        details.push("control", clo, f64::NAN, Sense::Info, &[l as f64, cavg, cneg]);
        control_min = control_min.min(clo);
        control_mean += cavg / params.depth() as f64;
        per_layer.push((lo, avg));
    }
    let first = per_layer[0].0;
    let last = per_layer[per_layer.len() - 1].0;
    let theta_depth = params.theta().as_f64() * params.depth() as f64;
    let mut measured = BTreeMap::new();
    measured.insert("min_margin".into(), per_layer.iter().map(|p| p.0).fold(f64::INFINITY, f64::min));
    measured.insert("min_margin_first".into(), first);
    measured.insert("min_margin_last".into(), last);
    measured.insert("mean_margin_last".into(), per_layer[per_layer.len() - 1].1);
    measured.insert("control_min".into(), control_min);
    measured.insert("control_mean".into(), control_mean);
    measured.insert("target".into(), target);
    measured.insert("degradation_fit".into(), if theta_depth > 0.0 { (first - last) / theta_depth } else { 0.0 });
    let fitted = measured["min_margin"] / gamma;
    ProbeReport::new("separability", cfg, batch.len(), fitted, measured, details)
}
