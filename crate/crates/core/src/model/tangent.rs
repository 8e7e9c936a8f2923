use super::forward::BatchTrace;
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::numkit::{dot, Matrix, Op};
use crate::scalar::Scalar;

/// Directional derivative of `f` along `deltas` with every activation
/// pattern frozen at `trace`, one value per sample:
/// `Σ_l tr[Δ_lᵀ ∇_{W_l} f_W(x_i)]`.
///
/// Propagates tangents forward, so it never materializes a gradient.
pub fn directional_derivative<T: Scalar>(
    params: &NetworkParams<T>,
    trace: &BatchTrace<T>,
    deltas: &[Matrix<T>],
) -> Result<Vec<T>> {
    if deltas.len() != params.layers() {
        return Err(Error::DimensionMismatch {
            context: "directional_derivative layers",
            expected: params.layers(),
            found: deltas.len(),
        });
    }
    for (l, d) in deltas.iter().enumerate() {
        if d.shape() != params.weight(l + 1).shape() {
            return Err(Error::DimensionMismatch {
                context: "directional_derivative layer shape",
                expected: params.weight(l + 1).rows() * params.weight(l + 1).cols(),
                found: d.rows() * d.cols(),
            });
        }
    }
    if trace.layers() != params.layers() {
        return Err(Error::DimensionMismatch {
            context: "directional_derivative trace",
            expected: params.layers(),
            found: trace.layers(),
        });
    }
    let n = trace.len();
    let mut tangent = Matrix::zeros(n, params.input_dim());
    for l in 1..=params.layers() {
        let mut dz = Matrix::matmul(&trace.activations[l - 1], Op::N, &deltas[l - 1], Op::N);
        if l > 1 {
            Matrix::gemm(T::one(), &tangent, Op::N, params.weight(l), Op::N, T::one(), &mut dz);
        }
        let z = &trace.preactivations[l - 1];
        for (t, &zz) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
            if zz <= T::zero() {
                *t = T::zero();
            }
        }
        tangent = if params.is_skip_layer(l) {
            let mut next = tangent;
            next.axpy(params.theta(), &dz);
            next
        } else {
            dz
        };
    }
    Ok((0..n).map(|i| dot(params.v(), tangent.row(i))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lossgrad::output_gradients;
    use crate::model::{forward, forward_batch, NetworkShape};
    use crate::numkit::{gaussian_matrix, RngState};

    #[test]
    fn matches_gradient_inner_product() {
        for arch in [crate::model::Arch::Residual, crate::model::Arch::Plain] {
            let shape = NetworkShape::residual(4, 5, 12, 10).with_arch(arch);
            let p = NetworkParams::<f64>::init_gaussian(RngState::root(21), shape).unwrap();
            let mut rng = RngState::root(22).rng();
            let deltas: Vec<Matrix<f64>> = p
                .weights()
                .iter()
                .map(|w| gaussian_matrix(&mut rng, w.rows(), w.cols(), 1.0).unwrap())
                .collect();
            let xs = Matrix::from_rows(&(0..6).map(|_| rng.sphere(4)).collect::<Vec<Vec<f64>>>()).unwrap();
            let batch = forward_batch(&p, &xs).unwrap();
            let jvp = directional_derivative(&p, &batch, &deltas).unwrap();
            for i in 0..6 {
                let t = forward(&p, xs.row(i)).unwrap();
                let g = output_gradients(&p, &t).unwrap();
                let inner = g.inner(&deltas);
                assert!((jvp[i] - inner).abs() <= 1e-10 * (1.0 + inner.abs()), "{} vs {}", jvp[i], inner);
            }
        }
    }

    #[test]
    fn rejects_wrong_layer_count() {
        let p = NetworkParams::<f64>::init_gaussian(RngState::root(1), NetworkShape::residual(3, 2, 4, 4)).unwrap();
        let xs = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let t = forward_batch(&p, &xs).unwrap();
        assert!(directional_derivative(&p, &t, &p.weights()[..2]).is_err());
    }
}
