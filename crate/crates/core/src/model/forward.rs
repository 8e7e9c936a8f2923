use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::numkit::{norm2, Matrix, Op};
use crate::scalar::Scalar;

/// Tolerance on `‖x‖₂ = 1` for network inputs.
pub const SPHERE_TOL: f64 = 1e-9;

/// Activations of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace<T> {
    /// `x_0 … x_{L+1}`; `x_0` is the input.
    pub activations: Vec<Vec<T>>,
    /// `W_lᵀ x_{l−1}` for `l = 1 … L+1`, stored at index `l − 1`.
    pub preactivations: Vec<Vec<T>>,
    pub output: T,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }

    /// `x_l`.
    pub fn activation(&self, l: usize) -> &[T] {
        &self.activations[l]
    }

    /// Bit `j` of `Σ_l`: `w_{l,j}ᵀ x_{l−1} > 0` (zero counts as inactive).
    #[inline]
    pub fn active(&self, l: usize, j: usize) -> bool {
        self.preactivations[l - 1][j] > T::zero()
    }

    pub fn pattern(&self, l: usize) -> Vec<bool> {
        self.preactivations[l - 1].iter().map(|&z| z > T::zero()).collect()
    }

    pub fn layers(&self) -> usize {
        self.preactivations.len()
    }
}

/// Activations of a batch, one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTrace<T> {
    /// `X_0 … X_{L+1}`, each `n × m_l`.
    pub activations: Vec<Matrix<T>>,
    /// `Z_l = X_{l−1} W_l` at index `l − 1`.
    pub preactivations: Vec<Matrix<T>>,
    pub outputs: Vec<T>,
}

impl<T: Scalar> BatchTrace<T> {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn layers(&self) -> usize {
        self.preactivations.len()
    }

    #[inline]
    pub fn active(&self, l: usize, i: usize, j: usize) -> bool {
        self.preactivations[l - 1][(i, j)] > T::zero()
    }

    /// Row `i` of `X_l`.
    pub fn activation(&self, l: usize, i: usize) -> &[T] {
        self.activations[l].row(i)
    }

    /// Extracts the single-sample trace of row `i`.
    pub fn sample(&self, i: usize) -> ActivationTrace<T> {
        ActivationTrace {
            activations: self.activations.iter().map(|a| a.row(i).to_vec()).collect(),
            preactivations: self.preactivations.iter().map(|z| z.row(i).to_vec()).collect(),
            output: self.outputs[i],
        }
    }

    /// Number of pattern bits that differ from `other`, per layer.
    pub fn flip_counts(&self, other: &BatchTrace<T>) -> Vec<usize> {
        self.preactivations
            .iter()
            .zip(&other.preactivations)
            .map(|(a, b)| {
                a.as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .filter(|(&x, &y)| (x > T::zero()) != (y > T::zero()))
                    .count()
            })
            .collect()
    }
}

pub fn check_on_sphere<T: Scalar>(x: &[T]) -> Result<()> {
    let n = norm2(x).as_f64();
    if (n - 1.0).abs() > SPHERE_TOL {
        return Err(Error::Precondition(format!("input norm {n} is not 1 (tolerance {SPHERE_TOL})")));
    }
    Ok(())
}

/// Forward pass for a single input on the unit sphere.
pub fn forward<T: Scalar>(params: &NetworkParams<T>, x: &[T]) -> Result<ActivationTrace<T>> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward input",
            expected: params.input_dim(),
            found: x.len(),
        });
    }
    check_on_sphere(x)?;
    let batch = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(forward_batch_unchecked(params, &batch).sample(0))
}

/// Forward pass for every row of `inputs`; each row must be on the sphere.
pub fn forward_batch<T: Scalar>(params: &NetworkParams<T>, inputs: &Matrix<T>) -> Result<BatchTrace<T>> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward_batch input",
            expected: params.input_dim(),
            found: inputs.cols(),
        });
    }
    for i in 0..inputs.rows() {
        check_on_sphere(inputs.row(i))?;
    }
    Ok(forward_batch_unchecked(params, inputs))
}

/// Forward pass without the sphere check; dimensions must already agree.
pub(crate) fn forward_batch_unchecked<T: Scalar>(params: &NetworkParams<T>, inputs: &Matrix<T>) -> BatchTrace<T> {
    let layers = params.layers();
    let mut activations = Vec::with_capacity(layers + 1);
    let mut preactivations = Vec::with_capacity(layers);
    activations.push(inputs.clone());
    for l in 1..=layers {
        let prev = &activations[l - 1];
        let z = Matrix::matmul(prev, Op::N, params.weight(l), Op::N);
        let next = if params.is_skip_layer(l) {
            let theta = params.theta();
            let mut x = prev.clone();
            for (xi, &zi) in x.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *xi = *xi + theta * zi.max(T::zero());
            }
            x
        } else {
            z.map(|t| t.max(T::zero()))
        };
        preactivations.push(z);
        activations.push(next);
    }
    let last = &activations[layers];
    let outputs = (0..last.rows())
        .map(|i| crate::numkit::dot(params.v(), last.row(i)))
        .collect();
    BatchTrace {
        activations,
        preactivations,
        outputs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Arch, NetworkShape};
    use crate::numkit::RngState;

    fn eye2() -> Matrix<f64> {
        Matrix::identity(2)
    }

    #[test]
    fn hand_computed_residual_network() {
        let shape = NetworkShape::residual(2, 2, 2, 2).with_theta(0.5);
        let p = NetworkParams::new(shape, vec![eye2(), eye2(), eye2()]).unwrap();
        let t = forward(&p, &[1.0, 0.0]).unwrap();
        assert_eq!(t.activations[1], vec![1.0, 0.0]);
        assert_eq!(t.activations[2], vec![1.5, 0.0]);
        assert_eq!(t.activations[3], vec![1.5, 0.0]);
        assert_eq!(t.output, 1.5);
        // Zero pre-activation counts as inactive.
        assert!(t.active(1, 0));
        assert!(!t.active(1, 1));
    }

    #[test]
    fn zero_weights_give_zero_everything() {
        let shape = NetworkShape::residual(3, 3, 4, 4);
        let ws = (1..=4)
            .map(|l| {
                let (r, c) = shape.layer_dims(l);
                Matrix::zeros(r, c)
            })
            .collect();
        let p = NetworkParams::<f64>::new(shape, ws).unwrap();
        let x = [0.6, 0.8, 0.0];
        let t = forward(&p, &x).unwrap();
        for l in 1..=4 {
            assert!(t.activation(l).iter().all(|&a| a == 0.0));
        }
        assert_eq!(t.output, 0.0);
    }

    #[test]
    fn plain_network_has_no_skip() {
        let shape = NetworkShape::residual(2, 2, 2, 2).with_theta(0.5).with_arch(Arch::Plain);
        let p = NetworkParams::new(shape, vec![eye2(), eye2(), eye2()]).unwrap();
        let t = forward(&p, &[1.0, 0.0]).unwrap();
        assert_eq!(t.activations[2], vec![1.0, 0.0]);
        assert_eq!(t.output, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = NetworkParams::<f64>::init_gaussian(RngState::root(0), NetworkShape::residual(3, 2, 4, 4)).unwrap();
        assert!(matches!(forward(&p, &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(forward(&p, &[0.9, 0.0, 0.0]), Err(Error::Precondition(_))));
        assert!(matches!(forward(&p, &[0.0, 0.0, 0.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn negated_input_has_disjoint_first_layer_support() {
        let p = NetworkParams::<f64>::init_gaussian(RngState::root(9), NetworkShape::residual(5, 2, 32, 32)).unwrap();
        let x: Vec<f64> = RngState::root(10).rng().sphere(5);
        let nx: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = forward(&p, &x).unwrap();
        let b = forward(&p, &nx).unwrap();
        for j in 0..32 {
            assert!(!(a.active(1, j) && b.active(1, j)));
        }
    }
}
