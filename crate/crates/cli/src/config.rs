use std::fs;
use std::path::{Path, PathBuf};

use reslab::model::{default_theta, Arch, NetworkShape};
use reslab::numkit::RngState;
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

/// Every knob of a run, read from a flat JSON object.
///
/// Missing keys take the golden values; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub m: usize,
    pub m_last: usize,
    pub n: usize,
    pub gamma: f64,
    /// Teacher features `M`.
    pub teacher_features: usize,
    /// Residual scale; `0.1 / L` when absent.
    pub theta: Option<f64>,
    pub eta: f64,
    #[serde(rename = "K")]
    pub max_steps: usize,
    /// Ball radius for the probes and the trainer's neighborhood warning.
    pub tau: f64,
    pub seed: u64,
    /// Extra sweep axis; empty means just `seed`.
    pub seeds: Vec<u64>,
    pub arch: Arch,
    pub probes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Training set; `<out>/dataset.bin` when absent.
    pub data: Option<PathBuf>,
    /// Held-out set; `<out>/heldout.bin` when absent.
    pub heldout: Option<PathBuf>,
    /// Weights to probe; a fresh initialization from `seed` when absent.
    pub checkpoint: Option<PathBuf>,
    pub heldout_n: usize,
    pub stop_surrogate: f64,
    pub stop_requires_separation: bool,
    pub record_every: usize,
    pub grid_depths: Vec<usize>,
    pub grid_archs: Vec<Arch>,
    pub grid_widths: Vec<usize>,
    pub eta_grid: Vec<f64>,
    pub threshold: f64,
    pub tau_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub probe_draws: usize,
    pub semismooth_draws: usize,
    pub sparsity: usize,
    pub xi_draws: usize,
    pub ascent_steps: usize,
    pub markov_band: f64,
    pub norm_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 10,
            depth: 16,
            m: 256,
            m_last: 256,
            n: 200,
            gamma: 0.1,
            teacher_features: 64,
            theta: None,
            eta: 0.01,
            max_steps: 2000,
            tau: 0.1,
            seed: 0,
            seeds: Vec::new(),
            arch: Arch::Residual,
            probes: vec!["all".into()],
            out: None,
            data: None,
            heldout: None,
            checkpoint: None,
            heldout_n: 2000,
            stop_surrogate: 0.0,
            stop_requires_separation: false,
            record_every: 1,
            grid_depths: vec![4, 16, 64],
            grid_archs: vec![Arch::Residual, Arch::Plain],
            grid_widths: Vec::new(),
            eta_grid: vec![0.0025, 0.005, 0.01],
            threshold: 0.3,
            tau_grid: vec![0.01, 0.03, 0.1, 0.3],
            beta_grid: vec![0.0, 0.01, 0.03, 0.1],
            probe_draws: 10,
            semismooth_draws: 200,
            sparsity: 16,
            xi_draws: 16,
            ascent_steps: 50,
            markov_band: 0.03,
            norm_samples: 100,
        }
    }
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub arch: Option<Arch>,
    pub probes: Option<Vec<String>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, flags: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::usage(format!("bad config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(o) = &flags.out {
            cfg.out = Some(o.clone());
        }
        if let Some(a) = flags.arch {
            cfg.arch = a;
        }
        if let Some(p) = &flags.probes {
            cfg.probes = p.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if self.d == 0 || self.depth == 0 || self.m == 0 || self.m_last == 0 || self.n == 0 || self.teacher_features == 0 {
            return Err(CliError::usage("d, L, m, m_last, n and teacher_features must be positive"));
        }
        if self.m_last % 2 != 0 {
            return Err(CliError::usage(format!("m_last = {} must be even", self.m_last)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(CliError::usage(format!("eta must be finite and positive, got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CliError::usage(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.record_every == 0 {
            return Err(CliError::usage("record_every must be at least 1"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn root(&self) -> RngState {
        RngState::root(self.seed)
    }

    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or_else(|| default_theta(self.depth))
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape::residual(self.d, self.depth, self.m, self.m_last)
            .with_arch(self.arch)
            .with_theta(self.theta())
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out_dir().join("dataset.bin"))
    }

    pub fn heldout_path(&self) -> PathBuf {
        self.heldout.clone().unwrap_or_else(|| self.out_dir().join("heldout.bin"))
    }

    /// The config as embedded in outputs: everything but the output directory.
    pub fn echo(&self) -> RunConfig {
        RunConfig {
            out: None,
            ..self.clone()
        }
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn sweep_widths(&self) -> Vec<usize> {
        if self.grid_widths.is_empty() {
            vec![self.m]
        } else {
            self.grid_widths.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig {
            theta: Some(0.003),
            seeds: vec![1, 2],
            out: Some("x".into()),
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn keys_are_flat_and_named() {
        let v = serde_json::to_value(RunConfig::default()).unwrap();
        let obj = v.as_object().unwrap();
        for key in ["d", "L", "m", "m_last", "n", "gamma", "eta", "K", "tau", "seeds", "arch", "probes"] {
            assert!(obj.contains_key(key), "{key}");
        }
        assert!(obj.values().all(|v| !v.is_object()));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"depth": 3}"#).is_err());
    }
}
