use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::numkit::{gaussian_matrix, Matrix, RngState};
use crate::scalar::Scalar;

/// Fraction of draws placed exactly on the boundary `‖W̃_l − W_l‖_F = τ`.
const BOUNDARY_SHARE: f64 = 0.8;

/// Weights within Frobenius distance `τ` of a center, layer by layer.
///
/// Draw `k` depends only on the seed and `k`, never on `τ`, so the same
/// index gives the same directions and radius fractions at every radius.
#[derive(Clone, Debug)]
pub struct PerturbationBall<'a, T> {
    center: &'a NetworkParams<T>,
    tau: f64,
    seed: RngState,
}

impl<'a, T: Scalar> PerturbationBall<'a, T> {
    pub fn new(center: &'a NetworkParams<T>, tau: f64, seed: RngState) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("ball radius must be finite and nonnegative, got {tau}")));
        }
        Ok(PerturbationBall { center, tau, seed })
    }

    pub fn center(&self) -> &NetworkParams<T> {
        self.center
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        PerturbationBall::new(self.center, tau, self.seed)
    }

    /// Draw `index`: per layer a Gaussian direction scaled to radius `u·τ`,
    /// with `u = 1` for most draws and `u ~ Uniform(0, 1]` otherwise.
    pub fn sample(&self, index: u64) -> Result<NetworkParams<T>> {
        let mut rng = self.seed.child(index).rng();
        let tau = T::of(self.tau);
        let mut weights = Vec::with_capacity(self.center.layers());
        for w in self.center.weights() {
            let on_boundary = rng.uniform::<f64>() < BOUNDARY_SHARE;
            let frac = 1.0 - rng.uniform::<f64>();
            let radius = if on_boundary { tau } else { tau * T::of(frac) };
            let mut dir = gaussian_matrix(&mut rng, w.rows(), w.cols(), T::one())?;
            let norm = dir.frobenius_norm();
            dir = dir.scaled(radius / norm);
            weights.push(project(w, dir, tau));
        }
        self.center.with_weights(weights)
    }

    /// Checks `‖W̃_l − W_l‖_F ≤ τ` on every layer.
    pub fn contains(&self, p: &NetworkParams<T>) -> Result<bool> {
        let tau = T::of(self.tau);
        Ok(p.layer_distances(self.center)?.iter().all(|&d| d <= tau))
    }
}

/// `center + delta`, shrinking `delta` until the realized distance is at most `tau`.
pub(super) fn project<T: Scalar>(center: &Matrix<T>, mut delta: Matrix<T>, tau: T) -> Matrix<T> {
    let shrink = T::one() - T::of(4.0) * T::epsilon();
    loop {
        let mut next = center.clone();
        next.axpy(T::one(), &delta);
        if next.sub(center).frobenius_norm() <= tau {
            return next;
        }
        delta = delta.scaled(shrink);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkShape;

    fn center() -> NetworkParams<f64> {
        NetworkParams::init_gaussian(RngState::root(4), NetworkShape::residual(5, 3, 16, 12)).unwrap()
    }

    #[test]
    fn draws_stay_inside_and_mostly_on_the_boundary() {
        let c = center();
        let ball = PerturbationBall::new(&c, 0.3, RngState::root(5)).unwrap();
        let mut on_edge = 0;
        let mut total = 0;
        for k in 0..50 {
            let p = ball.sample(k).unwrap();
            assert!(ball.contains(&p).unwrap());
            for d in p.layer_distances(&c).unwrap() {
                total += 1;
                if d > 0.3 * (1.0 - 1e-9) {
                    on_edge += 1;
                }
            }
        }
        let share = on_edge as f64 / total as f64;
        assert!(share > 0.7 && share < 0.9, "{share}");
    }

    #[test]
    fn radius_zero_returns_the_center() {
        let c = center();
        let ball = PerturbationBall::new(&c, 0.0, RngState::root(5)).unwrap();
        assert_eq!(ball.sample(3).unwrap(), c);
    }

    #[test]
    fn same_index_scales_with_tau() {
        let c = center();
        let a = PerturbationBall::new(&c, 0.1, RngState::root(6)).unwrap();
        let b = a.with_tau(0.2).unwrap();
        let (pa, pb) = (a.sample(7).unwrap(), b.sample(7).unwrap());
        for l in 1..=c.layers() {
            let da = pa.weight(l).sub(c.weight(l));
            let db = pb.weight(l).sub(c.weight(l));
            assert!(db.sub(&da.scaled(2.0)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_radius() {
        let c = center();
        assert!(PerturbationBall::new(&c, -0.1, RngState::root(0)).is_err());
    }
}
