//! Seeded, platform-independent random streams.
//!
//! A stream is identified by `(seed, stream)`; ChaCha8 with an explicit
//! stream word gives the same sequence everywhere. Named substreams are
//! derived with SplitMix64 so components draw from disjoint sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

/// Named substreams hanging off a root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substream {
    Data,
    Init,
    Ball,
    Xi,
    Heldout,
    Probe,
    Power,
}

impl Substream {
    fn tag(self) -> u64 {
        match self {
            Substream::Data => 0x6461_7461,
            Substream::Init => 0x696e_6974,
            Substream::Ball => 0x6261_6c6c,
            Substream::Xi => 0x7869,
            Substream::Heldout => 0x6865_6c64,
            Substream::Probe => 0x7072_6f62,
            Substream::Power => 0x706f_7772,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub const fn new(seed: u64, stream: u64) -> Self {
        RngState { seed, stream }
    }

    pub const fn root(seed: u64) -> Self {
        RngState { seed, stream: 0 }
    }

    pub fn substream(self, which: Substream) -> Self {
        self.child(which.tag())
    }

    /// Deterministic child stream, e.g. one per trial index.
    pub fn child(self, index: u64) -> Self {
        RngState {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn rng(self) -> SampleRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(self.stream);
        SampleRng { inner }
    }
}

/// A live random stream; advancing it never repeats earlier draws.
#[derive(Clone, Debug)]
pub struct SampleRng {
    inner: ChaCha8Rng,
}

impl SampleRng {
    pub fn normal<T: Scalar>(&mut self) -> T {
        let z: f64 = self.inner.sample(StandardNormal);
        T::of(z)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform<T: Scalar>(&mut self) -> T {
        T::of(self.inner.gen::<f64>())
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Rademacher sign.
    pub fn sign<T: Scalar>(&mut self) -> T {
        if self.inner.gen::<bool>() {
            T::one()
        } else {
            -T::one()
        }
    }

    pub fn normal_vec<T: Scalar>(&mut self, len: usize) -> Vec<T> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Uniform on the unit sphere in `ℝ^dim` via normalized Gaussians.
    pub fn sphere<T: Scalar>(&mut self, dim: usize) -> Vec<T> {
        loop {
            let mut v = self.normal_vec::<T>(dim);
            let n = super::reduce::normalize(&mut v);
            if n > T::zero() {
                return v;
            }
        }
    }

    /// `k` distinct indices from `0..n`, in ascending order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec();
        idx.sort_unstable();
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_sequence() {
        let a: Vec<f64> = RngState::new(7, 3).rng().normal_vec(16);
        let b: Vec<f64> = RngState::new(7, 3).rng().normal_vec(16);
        assert_eq!(a, b);
        let c: Vec<f64> = RngState::new(7, 4).rng().normal_vec(16);
        assert_ne!(a, c);
    }

    #[test]
    fn substreams_are_distinct() {
        let root = RngState::root(1);
        let d = root.substream(Substream::Data);
        let i = root.substream(Substream::Init);
        assert_ne!(d, i);
        assert_ne!(d.child(0), d.child(1));
        assert_eq!(d.child(5), root.substream(Substream::Data).child(5));
    }

    #[test]
    fn sphere_points_are_unit() {
        let mut rng = RngState::root(2).rng();
        for _ in 0..50 {
            let x: Vec<f64> = rng.sphere(7);
            assert!((super::super::reduce::norm2(&x) - 1.0).abs() < 1e-12);
        }
    }
}
