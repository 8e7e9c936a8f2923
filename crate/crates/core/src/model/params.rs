use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{gaussian_matrix, Matrix, RngState};
use crate::scalar::Scalar;

/// Which network family the weights describe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// `x_l = x_{l−1} + θ·σ(W_lᵀ x_{l−1})` for the middle layers.
    Residual,
    /// `x_l = σ(W_lᵀ x_{l−1})` at every layer.
    Plain,
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(Arch::Residual),
            "plain" => Ok(Arch::Plain),
            other => Err(Error::Config(format!("unknown arch {other:?} (expected residual|plain)"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Residual => "residual",
            Arch::Plain => "plain",
        })
    }
}

/// Architectural constants of a network, independent of its weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    /// Number of hidden layers `L`; the network has `L + 1` weight matrices.
    pub depth: usize,
    /// Hidden width `m = m_1 = … = m_L`.
    pub width: usize,
    /// Top-layer width `m_{L+1}`.
    pub last_width: usize,
    pub theta: f64,
    pub arch: Arch,
}

impl NetworkShape {
    /// Residual shape with the default scaling `θ = 0.1 / L`.
    pub fn residual(input_dim: usize, depth: usize, width: usize, last_width: usize) -> Self {
        NetworkShape {
            input_dim,
            depth,
            width,
            last_width,
            theta: default_theta(depth),
            arch: Arch::Residual,
        }
    }

    pub fn with_arch(mut self, arch: Arch) -> Self {
        self.arch = arch;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn layers(&self) -> usize {
        self.depth + 1
    }

    /// `(m_{l−1}, m_l)` for 1-based layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        let rows = if l == 1 { self.input_dim } else { self.width };
        let cols = if l == self.depth + 1 { self.last_width } else { self.width };
        (rows, cols)
    }

    /// Width used by the bounds: `m = m_L ∧ m_{L+1}`.
    pub fn min_width(&self) -> usize {
        self.width.min(self.last_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.depth == 0 || self.width == 0 || self.last_width == 0 {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        if self.last_width % 2 != 0 {
            return Err(Error::Config(format!("m_last = {} must be even", self.last_width)));
        }
        let ratio = self.last_width as f64 / self.width as f64;
        if !(0.25..=4.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "m_last / m = {ratio} outside [1/4, 4]; widths must be of the same order"
            )));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::Config(format!("theta must be positive, got {}", self.theta)));
        }
        if self.arch == Arch::Residual && self.theta * self.depth as f64 > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "theta * L = {} exceeds 1 for the residual architecture",
                self.theta * self.depth as f64
            )));
        }
        Ok(())
    }
}

pub fn default_theta(depth: usize) -> f64 {
    0.1 / depth.max(1) as f64
}

/// The fixed output vector `v = (1,…,1,−1,…,−1)`.
pub fn output_signs<T: Scalar>(last_width: usize) -> Vec<T> {
    (0..last_width)
        .map(|j| if j < last_width / 2 { T::one() } else { -T::one() })
        .collect()
}

/// All weights of a network plus its architectural constants.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    shape: NetworkShape,
    theta: T,
    weights: Vec<Matrix<T>>,
    v: Vec<T>,
}

impl<T: Scalar> NetworkParams<T> {
    /// Assembles a network from explicit weights, checking every shape.
    pub fn new(shape: NetworkShape, weights: Vec<Matrix<T>>) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.layers() {
            return Err(Error::DimensionMismatch {
                context: "NetworkParams::new layer count",
                expected: shape.layers(),
                found: weights.len(),
            });
        }
        for (idx, w) in weights.iter().enumerate() {
            let (r, c) = shape.layer_dims(idx + 1);
            if w.shape() != (r, c) {
                return Err(Error::Config(format!(
                    "W_{} has shape {:?}, expected ({r}, {c})",
                    idx + 1,
                    w.shape()
                )));
            }
            if !w.is_finite() {
                return Err(Error::NumericDomain(format!("W_{} has non-finite entries", idx + 1)));
            }
        }
        Ok(NetworkParams {
            shape,
            theta: T::of(shape.theta),
            weights,
            v: output_signs(shape.last_width),
        })
    }

    /// Gaussian initialization: every entry of `W_l` drawn from `N(0, 2/m_l)`.
    pub fn init_gaussian(rng: RngState, shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        let mut stream = rng.rng();
        let mut weights = Vec::with_capacity(shape.layers());
        for l in 1..=shape.layers() {
            let (r, c) = shape.layer_dims(l);
            weights.push(gaussian_matrix(&mut stream, r, c, T::of(2.0 / c as f64))?);
        }
        Self::new(shape, weights)
    }

    #[inline]
    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    #[inline]
    pub fn arch(&self) -> Arch {
        self.shape.arch
    }

    #[inline]
    pub fn theta(&self) -> T {
        self.theta
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.shape.depth
    }

    #[inline]
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.shape.input_dim
    }

    /// `W_l`, 1-based.
    #[inline]
    pub fn weight(&self, l: usize) -> &Matrix<T> {
        &self.weights[l - 1]
    }

    #[inline]
    pub fn weight_mut(&mut self, l: usize) -> &mut Matrix<T> {
        &mut self.weights[l - 1]
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    /// True when layer `l` is a scaled skip block.
    #[inline]
    pub fn is_skip_layer(&self, l: usize) -> bool {
        self.shape.arch == Arch::Residual && l >= 2 && l <= self.shape.depth
    }

    /// `θ^{𝟙(2 ≤ l ≤ L)}` for residual networks; 1 for the plain baseline.
    #[inline]
    pub fn layer_scale(&self, l: usize) -> T {
        if self.is_skip_layer(l) {
            self.theta
        } else {
            T::one()
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }

    /// Same shape, same `θ`, different weights.
    pub fn with_weights(&self, weights: Vec<Matrix<T>>) -> Result<Self> {
        Self::new(self.shape, weights)
    }

    /// Per-layer `‖W_l − W'_l‖_F`.
    pub fn layer_distances(&self, other: &Self) -> Result<Vec<T>> {
        self.check_same_shape(other)?;
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| a.sub(b).frobenius_norm())
            .collect())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Config(format!(
                "network shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shapes_and_determinism() {
        let shape = NetworkShape::residual(5, 3, 8, 6);
        let a = NetworkParams::<f64>::init_gaussian(RngState::root(1), shape).unwrap();
        let b = NetworkParams::<f64>::init_gaussian(RngState::root(1), shape).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weight(1).shape(), (5, 8));
        assert_eq!(a.weight(2).shape(), (8, 8));
        assert_eq!(a.weight(4).shape(), (8, 6));
        assert_eq!(a.v(), &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let sq = NetworkParams::<f64>::init_gaussian(RngState::root(1), NetworkShape::residual(8, 2, 8, 8)).unwrap();
        assert_eq!(sq.weight(1).shape(), (8, 8));
    }

    #[test]
    fn shape_validation() {
        assert!(NetworkShape::residual(4, 2, 8, 7).validate().is_err());
        assert!(NetworkShape::residual(4, 2, 8, 40).validate().is_err());
        assert!(NetworkShape::residual(4, 4, 8, 8).with_theta(0.3).validate().is_err());
        assert!(NetworkShape::residual(4, 4, 8, 8)
            .with_theta(0.3)
            .with_arch(Arch::Plain)
            .validate()
            .is_ok());
        assert!(NetworkShape::residual(4, 4, 8, 8).with_theta(0.0).validate().is_err());
    }

    #[test]
    fn layer_scale_exponent() {
        let p = NetworkParams::<f64>::init_gaussian(RngState::root(3), NetworkShape::residual(3, 4, 4, 4)).unwrap();
        let th = p.theta();
        assert_eq!(p.layer_scale(1), 1.0);
        assert_eq!(p.layer_scale(2), th);
        assert_eq!(p.layer_scale(4), th);
        assert_eq!(p.layer_scale(5), 1.0);
    }
}
