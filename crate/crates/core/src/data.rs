//! Margin-separable synthetic data.
//!
//! A teacher is a finite random-features sum
//! `f̂(x) = (1/M) Σ_j c_j σ(u_jᵀ x)` with `u_j ~ N(0, I_d)` and `c_j = ±1`.
//! Inputs are uniform on the sphere; draws with `|f̂(x)| < γ` are rejected,
//! so every stored sample satisfies `y·f̂(x) ≥ γ` surely.
//!
//! # Dataset file layout
//!
//! One line of JSON ([`DatasetHeader`]) terminated by `\n`, then:
//!
//! 1. teacher directions `u_1 … u_M`, `M·d` little-endian `f64`, row-major;
//! 2. teacher coefficients `c_1 … c_M`, `M` little-endian `f64`;
//! 3. for each sample: `d` little-endian `f64` followed by one label byte
//!    (`0x01` for `+1`, `0xFF` for `−1`).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lossgrad::LabeledBatch;
use crate::model::SPHERE_TOL;
use crate::numkit::{dot, gaussian_matrix, norm2, Matrix, RngState, SampleRng, Substream};
use crate::scalar::Scalar;

pub const DATASET_FORMAT: &str = "reslab-dataset";
pub const DATASET_VERSION: u32 = 1;
/// Draws in the feasibility pilot.
pub const PILOT_DRAWS: usize = 100_000;
/// Minimum pilot acceptance rate.
pub const MIN_ACCEPTANCE: f64 = 0.01;
/// Each class must make up at least this fraction of accepted pilot draws.
pub const MIN_CLASS_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct Teacher<T> {
    /// `M × d`, one feature direction per row.
    pub directions: Matrix<T>,
    pub coefficients: Vec<T>,
    pub gamma: T,
}

impl<T: Scalar> Teacher<T> {
    pub fn new(directions: Matrix<T>, coefficients: Vec<T>, gamma: T) -> Result<Self> {
        if directions.rows() == 0 || directions.cols() == 0 {
            return Err(Error::EmptyShape {
                rows: directions.rows(),
                cols: directions.cols(),
            });
        }
        if coefficients.len() != directions.rows() {
            return Err(Error::DimensionMismatch {
                context: "Teacher coefficients",
                expected: directions.rows(),
                found: coefficients.len(),
            });
        }
        if let Some(c) = coefficients.iter().find(|c| !(c.abs() <= T::one())) {
            return Err(Error::Invariant(format!("teacher coefficient {c} has |c| > 1")));
        }
        if !(gamma >= T::zero()) {
            return Err(Error::Config(format!("margin gamma must be nonnegative, got {gamma}")));
        }
        Ok(Teacher {
            directions,
            coefficients,
            gamma,
        })
    }

    pub fn features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn input_dim(&self) -> usize {
        self.directions.cols()
    }

    /// `f̂(x)`; the single canonical evaluation used for generation and
    /// validation alike.
    pub fn value(&self, x: &[T]) -> T {
        let terms: Vec<T> = (0..self.features())
            .map(|j| self.coefficients[j] * dot(self.directions.row(j), x).max(T::zero()))
            .collect();
        crate::numkit::pairwise_sum(&terms) / T::of(self.features() as f64)
    }

    /// Index of the feature direction with the largest cosine similarity to `u`.
    pub fn nearest_feature(&self, u: &[T]) -> usize {
        let mut best = 0;
        let mut best_cos = T::neg_infinity();
        for j in 0..self.features() {
            let row = self.directions.row(j);
            let c = dot(row, u) / norm2(row);
            if c > best_cos {
                best_cos = c;
                best = j;
            }
        }
        best
    }

    /// Nearest-feature extension `c(u) = c_{j*(u)}` of the coefficients.
    pub fn coefficient_at(&self, u: &[T]) -> T {
        self.coefficients[self.nearest_feature(u)]
    }
}

/// Teacher with `M` Gaussian directions and uniform `±1` coefficients.
pub fn make_teacher<T: Scalar>(rng: RngState, d: usize, m_features: usize, gamma: T) -> Result<Teacher<T>> {
    if m_features == 0 || d == 0 {
        return Err(Error::Config("teacher needs d >= 1 and M >= 1".into()));
    }
    let mut stream = rng.rng();
    let directions = gaussian_matrix(&mut stream, m_features, d, T::one())?;
    // Balanced signs in random order: each c_j is uniform on ±1 but Σ c_j ∈ {0, ±1},
    // so f̂ has no mean offset favouring one class.
    let mut coefficients: Vec<T> = (0..m_features)
        .map(|j| if j < m_features / 2 { -T::one() } else { T::one() })
        .collect();
    if m_features % 2 == 1 {
        coefficients[m_features - 1] = stream.sign();
    }
    for j in (1..m_features).rev() {
        coefficients.swap(j, stream.below(j + 1));
    }
    Teacher::new(directions, coefficients, gamma)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginDataset<T> {
    /// `n × d`, one unit-norm sample per row.
    pub inputs: Matrix<T>,
    pub labels: Vec<i8>,
    pub teacher: Teacher<T>,
    pub seed: RngState,
    pub acceptance_rate: f64,
    /// `min_i y_i f̂(x_i)`.
    pub realized_margin: T,
}

impl<T: Scalar> MarginDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gamma(&self) -> T {
        self.teacher.gamma
    }

    pub fn to_batch(&self) -> LabeledBatch<T> {
        LabeledBatch {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn positive_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&y| y > 0).count() as f64 / self.len().max(1) as f64
    }

    /// Rechecks normalization, labels and the margin certificate.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        if self.inputs.rows() != self.labels.len() || self.inputs.cols() != self.teacher.input_dim() {
            return Err(Error::Invariant("dataset shapes disagree with its teacher".into()));
        }
        let mut min_margin = T::infinity();
        for i in 0..self.len() {
            let x = self.inputs.row(i);
            let n = norm2(x).as_f64();
            if (n - 1.0).abs() > SPHERE_TOL {
                return Err(Error::Invariant(format!("sample {i} has norm {n}, not 1")));
            }
            let y = self.labels[i];
            if y != 1 && y != -1 {
                return Err(Error::Invariant(format!("sample {i} has label {y}")));
            }
            let m = T::of(y as f64) * self.teacher.value(x);
            if m < self.teacher.gamma || (self.teacher.gamma == T::zero() && m <= T::zero()) {
                return Err(Error::Invariant(format!(
                    "sample {i} has teacher margin {m} below gamma {}",
                    self.teacher.gamma
                )));
            }
            min_margin = min_margin.min(m);
        }
        if min_margin != self.realized_margin {
            return Err(Error::Invariant(format!(
                "stored realized margin {} differs from recomputed {min_margin}",
                self.realized_margin
            )));
        }
        Ok(())
    }
}

fn accept<T: Scalar>(teacher: &Teacher<T>, x: &[T]) -> Option<i8> {
    let f = teacher.value(x);
    if f == T::zero() || f.abs() < teacher.gamma {
        None
    } else if f > T::zero() {
        Some(1)
    } else {
        Some(-1)
    }
}

/// Acceptance rate and positive fraction over [`PILOT_DRAWS`] draws.
pub fn pilot_acceptance<T: Scalar>(teacher: &Teacher<T>, rng: RngState) -> (f64, f64) {
    let mut stream = rng.rng();
    let d = teacher.input_dim();
    let mut accepted = 0usize;
    let mut positive = 0usize;
    for _ in 0..PILOT_DRAWS {
        let x: Vec<T> = stream.sphere(d);
        if let Some(y) = accept(teacher, &x) {
            accepted += 1;
            if y > 0 {
                positive += 1;
            }
        }
    }
    let rate = accepted as f64 / PILOT_DRAWS as f64;
    let pos = if accepted == 0 { 0.0 } else { positive as f64 / accepted as f64 };
    (rate, pos)
}

/// `n` samples certified to satisfy `y·f̂(x) ≥ γ`.
///
/// A pilot on a child stream first checks the margin is feasible and the
/// classes are balanced; the samples then come from `rng` itself.
pub fn sample_dataset<T: Scalar>(teacher: &Teacher<T>, rng: RngState, n: usize) -> Result<MarginDataset<T>> {
    if n == 0 {
        return Err(Error::Config("dataset size n must be at least 1".into()));
    }
    let (rate, pos) = pilot_acceptance(teacher, rng.child(u64::MAX));
    if rate < MIN_ACCEPTANCE {
        return Err(Error::InfeasibleMargin {
            rate,
            min_rate: MIN_ACCEPTANCE,
            draws: PILOT_DRAWS,
        });
    }
    if !(MIN_CLASS_FRACTION..=1.0 - MIN_CLASS_FRACTION).contains(&pos) {
        return Err(Error::DegenerateTeacher { positive_fraction: pos });
    }
    let mut stream: SampleRng = rng.rng();
    let d = teacher.input_dim();
    let mut rows = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut min_margin = T::infinity();
    while labels.len() < n {
        let x: Vec<T> = stream.sphere(d);
        if let Some(y) = accept(teacher, &x) {
            min_margin = min_margin.min(T::of(y as f64) * teacher.value(&x));
            rows.extend_from_slice(&x);
            labels.push(y);
        }
    }
    Ok(MarginDataset {
        inputs: Matrix::from_vec(n, d, rows)?,
        labels,
        teacher: teacher.clone(),
        seed: rng,
        acceptance_rate: rate,
        realized_margin: min_margin,
    })
}

/// Teacher and training sample of a run rooted at `root`, both drawn from
/// its data substream.
pub fn dataset_from_root<T: Scalar>(
    root: RngState,
    d: usize,
    m_features: usize,
    gamma: T,
    n: usize,
) -> Result<MarginDataset<T>> {
    let data = root.substream(Substream::Data);
    let teacher = make_teacher(data.child(0), d, m_features, gamma)?;
    sample_dataset(&teacher, data.child(1), n)
}

/// Held-out sample from the same teacher, on the run's held-out substream.
pub fn heldout_from_root<T: Scalar>(root: RngState, teacher: &Teacher<T>, n: usize) -> Result<MarginDataset<T>> {
    sample_dataset(teacher, root.substream(Substream::Heldout), n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub n: usize,
    pub m_features: usize,
    pub gamma: f64,
    pub seed: RngState,
    pub acceptance_rate: f64,
    pub realized_margin: f64,
    pub payload_bytes: usize,
}

fn payload_len(d: usize, n: usize, m: usize) -> usize {
    8 * m * d + 8 * m + n * (8 * d + 1)
}

pub fn write_dataset<T: Scalar, W: Write>(ds: &MarginDataset<T>, mut out: W) -> Result<()> {
    let d = ds.teacher.input_dim();
    let m = ds.teacher.features();
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        d,
        n: ds.len(),
        m_features: m,
        gamma: ds.teacher.gamma.as_f64(),
        seed: ds.seed,
        acceptance_rate: ds.acceptance_rate,
        realized_margin: ds.realized_margin.as_f64(),
        payload_bytes: payload_len(d, ds.len(), m),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(header.payload_bytes);
    for &u in ds.teacher.directions.as_slice() {
        buf.extend_from_slice(&u.as_f64().to_le_bytes());
    }
    for &c in &ds.teacher.coefficients {
        buf.extend_from_slice(&c.as_f64().to_le_bytes());
    }
    for i in 0..ds.len() {
        for &x in ds.inputs.row(i) {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        buf.push(ds.labels[i] as u8);
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl Cursor<'_> {
    fn f64(&mut self) -> Result<f64> {
        let end = self.pos + 8;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(format!("byte offset {}", self.base + self.pos), "unexpected end of payload"))?;
        let x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !x.is_finite() {
            return Err(Error::format(format!("byte offset {}", self.base + self.pos), "non-finite value"));
        }
        self.pos = end;
        Ok(x)
    }

    fn label(&mut self) -> Result<i8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::format(format!("byte offset {}", self.base + self.pos), "unexpected end of payload"))?;
        let y = b as i8;
        if y != 1 && y != -1 {
            return Err(Error::format(format!("byte offset {}", self.base + self.pos), format!("label byte {b:#04x}")));
        }
        self.pos += 1;
        Ok(y)
    }
}

pub fn read_dataset<T: Scalar, R: Read>(mut input: R) -> Result<MarginDataset<T>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Err(Error::format("line 1", "empty dataset file"));
    }
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("line 1", "missing header terminator"))?;
    let h: DatasetHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::format(format!("line 1, column {}", e.column()), e.to_string()))?;
    if h.format != DATASET_FORMAT || h.version != DATASET_VERSION {
        return Err(Error::format("line 1", format!("unsupported format {} v{}", h.format, h.version)));
    }
    if h.n == 0 {
        return Err(Error::Data("dataset is empty".into()));
    }
    let payload = &bytes[nl + 1..];
    let want = payload_len(h.d, h.n, h.m_features);
    if payload.len() != want || h.payload_bytes != want {
        return Err(Error::format(
            format!("byte offset {}", nl + 1),
            format!("payload has {} bytes, expected {want}", payload.len()),
        ));
    }
    let mut cur = Cursor {
        bytes: payload,
        pos: 0,
        base: nl + 1,
    };
    let mut dirs = Vec::with_capacity(h.m_features * h.d);
    for _ in 0..h.m_features * h.d {
        dirs.push(T::of(cur.f64()?));
    }
    let mut coefs = Vec::with_capacity(h.m_features);
    for _ in 0..h.m_features {
        coefs.push(T::of(cur.f64()?));
    }
    let teacher = Teacher::new(Matrix::from_vec(h.m_features, h.d, dirs)?, coefs, T::of(h.gamma))?;
    let mut rows = Vec::with_capacity(h.n * h.d);
    let mut labels = Vec::with_capacity(h.n);
    for _ in 0..h.n {
        for _ in 0..h.d {
            rows.push(T::of(cur.f64()?));
        }
        labels.push(cur.label()?);
    }
    let ds = MarginDataset {
        inputs: Matrix::from_vec(h.n, h.d, rows)?,
        labels,
        teacher,
        seed: h.seed,
        acceptance_rate: h.acceptance_rate,
        realized_margin: T::of(h.realized_margin),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset<T: Scalar>(ds: &MarginDataset<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<MarginDataset<T>> {
    read_dataset(std::fs::File::open(path)?)
}
