//! Measurements that set a network quantity against the expression bounding it.
//!
//! Every probe returns a [`ProbeReport`] whose verdict is a pure function of
//! its [`DetailTable`]: each row carries the measured value, the bound it is
//! compared with and the direction of the comparison. Writing a report
//! produces `<name>.report.json` and `<name>.details.csv`; the verdict can be
//! recomputed from the CSV alone with [`read_details`].

mod activations;
mod ball;
mod rademacher;
mod separability;
mod smoothness;
mod training;

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activations::{
    probe_activation_norms, probe_input_lipschitz, probe_sparse_output, probe_threshold_indices, sparse_output_values,
    threshold_count, ActivationNormConfig, InputLipschitzConfig, SparseOutputConfig, ThresholdIndexSet,
};
pub use ball::PerturbationBall;
pub use rademacher::{rademacher_bound_expr, rademacher_estimate, RademacherConfig};
pub use separability::{probe_separability, SeparabilityConfig, SeparabilityDirection};
pub use smoothness::{
    layered_distance_expr, probe_semismoothness, probe_weight_lipschitz_and_flips, semismooth_expr, taylor_residuals,
    TaylorPair,
    SemismoothnessConfig, WeightLipschitzConfig,
};
pub use training::{
    depth_cell, depth_sweep, depth_sweep_report, gradient_lower_ratio, gradient_upper_ratio, probe_gradient_bounds, probe_loss_at_init,
    probe_surrogate_markov, DepthCell, DepthSweepConfig, GradientBoundsConfig, LossAtInitConfig, MarkovConfig,
};

/// Direction of the comparison in a detail row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `measured ≤ bound`.
    Upper,
    /// `measured ≥ bound`.
    Lower,
    /// Diagnostic; never affects the verdict.
    Info,
}

impl Sense {
    fn code(self) -> f64 {
        match self {
            Sense::Upper => 1.0,
            Sense::Lower => -1.0,
            Sense::Info => 0.0,
        }
    }

    fn from_code(c: f64) -> Option<Self> {
        match c {
            c if c == 1.0 => Some(Sense::Upper),
            c if c == -1.0 => Some(Sense::Lower),
            c if c == 0.0 => Some(Sense::Info),
            _ => None,
        }
    }

    pub fn holds(self, measured: f64, bound: f64) -> bool {
        match self {
            Sense::Upper => measured <= bound,
            Sense::Lower => measured >= bound,
            Sense::Info => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Hold,
    Violated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetailRow {
    pub label: String,
    pub measured: f64,
    pub bound: f64,
    pub sense: Sense,
    pub extras: Vec<f64>,
}

impl DetailRow {
    pub fn holds(&self) -> bool {
        self.sense.holds(self.measured, self.bound)
    }

    /// How far the row is from its bound; positive means violated.
    fn excess(&self) -> f64 {
        match self.sense {
            Sense::Upper => self.measured - self.bound,
            Sense::Lower => self.bound - self.measured,
            Sense::Info => f64::NEG_INFINITY,
        }
    }
}

/// Per-trial rows of a probe.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DetailTable {
    /// Names of the extra columns following `label, measured, bound, sense`.
    pub extra_columns: Vec<String>,
    pub rows: Vec<DetailRow>,
}

impl DetailTable {
    pub fn new(extra_columns: &[&str]) -> Self {
        DetailTable {
            extra_columns: extra_columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, measured: f64, bound: f64, sense: Sense, extras: &[f64]) {
        assert_eq!(extras.len(), self.extra_columns.len(), "extras must match the declared columns");
        self.rows.push(DetailRow {
            label: label.to_string(),
            measured,
            bound,
            sense,
            extras: extras.to_vec(),
        });
    }

    pub fn verdict(&self) -> Verdict {
        if self.rows.iter().all(DetailRow::holds) {
            Verdict::Hold
        } else {
            Verdict::Violated
        }
    }

    /// Rows with a given label.
    pub fn labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a DetailRow> + 'a {
        self.rows.iter().filter(move |r| r.label == label)
    }

    pub fn extra(&self, row: &DetailRow, column: &str) -> Option<f64> {
        self.extra_columns.iter().position(|c| c == column).map(|i| row.extras[i])
    }

    /// The checked row closest to (or furthest past) its bound.
    fn binding(&self) -> Option<&DetailRow> {
        self.rows
            .iter()
            .filter(|r| r.sense != Sense::Info)
            .max_by(|a, b| a.excess().total_cmp(&b.excess()))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string(), "measured".into(), "bound".into(), "sense".into()];
        header.extend(self.extra_columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone(), fmt(r.measured), fmt(r.bound), fmt(r.sense.code())];
            rec.extend(r.extras.iter().map(|&x| fmt(x)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let fixed = ["label", "measured", "bound", "sense"];
        if header.len() < fixed.len() || header.iter().zip(fixed).any(|(h, f)| h != f) {
            return Err(Error::format("header", "details header must start with label,measured,bound,sense"));
        }
        let mut table = DetailTable {
            extra_columns: header.iter().skip(fixed.len()).map(str::to_string).collect(),
            rows: Vec::new(),
        };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let at = format!("line {}", line + 2);
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::format(&at, "missing field"))?
                    .parse::<f64>()
                    .map_err(|e| Error::format(&at, &e.to_string()))
            };
            let sense = Sense::from_code(num(3)?).ok_or_else(|| Error::format(&at, "sense must be 1, -1 or 0"))?;
            let extras = (fixed.len()..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
            table.rows.push(DetailRow {
                label: rec[0].to_string(),
                measured: num(1)?,
                bound: num(2)?,
                sense,
                extras,
            });
        }
        Ok(table)
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// JSON has no NaN or infinity; those are written as the strings `"NaN"`,
/// `"inf"` and `"-inf"`.
pub(crate) mod nonfinite {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Text(String),
    }

    pub(super) fn to_repr(x: f64) -> Repr {
        if x.is_nan() {
            Repr::Text("NaN".into())
        } else if x.is_infinite() {
            Repr::Text(if x > 0.0 { "inf" } else { "-inf" }.into())
        } else {
            Repr::Num(x)
        }
    }

    pub(super) fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("expected a number, NaN, inf or -inf, got {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod map {
        use std::collections::BTreeMap;

        use serde::{Deserialize, Deserializer, Serializer};

        use super::{from_repr, to_repr, Repr};

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            s.collect_map(m.iter().map(|(k, &v)| (k, to_repr(v))))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            BTreeMap::<String, Repr>::deserialize(d)?
                .into_iter()
                .map(|(k, v)| from_repr(v).map(|x| (k, x)))
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    #[serde(with = "nonfinite::map")]
    pub measured: BTreeMap<String, f64>,
    /// Bound of the binding row (the checked row nearest its limit).
    #[serde(with = "nonfinite")]
    pub bound_expr: f64,
    /// Smallest (upper) or largest (lower) constant consistent with every trial.
    #[serde(with = "nonfinite")]
    pub constant_fit: f64,
    pub trials: usize,
    pub verdict: Verdict,
    pub config: serde_json::Value,
    pub details_path: Option<String>,
    #[serde(skip)]
    pub details: DetailTable,
}

impl ProbeReport {
    pub fn new<C: Serialize>(
        name: &str,
        config: &C,
        trials: usize,
        constant_fit: f64,
        measured: BTreeMap<String, f64>,
        details: DetailTable,
    ) -> Result<Self> {
        let bound_expr = details.binding().map_or(f64::NAN, |r| r.bound);
        Ok(ProbeReport {
            name: name.to_string(),
            measured,
            bound_expr,
            constant_fit,
            trials,
            verdict: details.verdict(),
            config: serde_json::to_value(config)?,
            details_path: None,
            details,
        })
    }

    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Hold
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.measured.get(key).copied()
    }

    /// Writes `<name>.details.csv` and `<name>.report.json` into `dir`.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let details_name = format!("{}.details.csv", self.name);
        self.details.write_csv(fs::File::create(dir.join(&details_name))?)?;
        self.details_path = Some(details_name);
        let report_path = dir.join(format!("{}.report.json", self.name));
        let mut f = fs::File::create(&report_path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(report_path)
    }

    /// Loads a report and its details table.
    pub fn load(report_path: &Path) -> Result<Self> {
        let mut report: ProbeReport = serde_json::from_reader(fs::File::open(report_path)?)?;
        let details = report
            .details_path
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{} names no details file", report_path.display())))?;
        let dir = report_path.parent().unwrap_or_else(|| Path::new("."));
        report.details = read_details(&dir.join(details))?;
        Ok(report)
    }
}

pub fn read_details(path: &Path) -> Result<DetailTable> {
    DetailTable::read_csv(fs::File::open(path)?)
}

/// `max measured/expr` over pairs with `expr > 0`; zero when there are none.
pub fn fit_upper(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    pairs
        .into_iter()
        .filter(|&(_, e)| e > 0.0)
        .map(|(m, e)| m / e)
        .fold(0.0, f64::max)
}

/// `min measured/expr` over pairs with `expr > 0`; infinite when there are none.
pub fn fit_lower(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    pairs
        .into_iter()
        .filter(|&(_, e)| e > 0.0)
        .map(|(m, e)| m / e)
        .fold(f64::INFINITY, f64::min)
}

/// Least-squares slope of `ln y` against `ln x` over points with `x, y > 0`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(x, y)| x > 0.0 && y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Ratio of the largest to the smallest of positive values.
pub fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Name-indexed registry of the probes the command line can run.
pub const PROBE_NAMES: [&str; 12] = [
    "activation_norms",
    "input_lipschitz",
    "weight_lipschitz_flips",
    "semismoothness",
    "gradient_bounds",
    "separability",
    "threshold_indices",
    "sparse_output",
    "loss_at_init",
    "rademacher",
    "surrogate_markov",
    "depth_sweep",
];
