//! Seeded, platform-independent random numbers: ChaCha8 with one stream per
//! purpose, plus the distributions the pipeline draws from.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{Result, TensorError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn invalid(op: &'static str, detail: String) -> TensorError {
    TensorError::Invalid { op, detail }
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    /// Independent stream for a named purpose, e.g. data order vs. λ draws.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn gamma(&mut self, shape: f64) -> Result<f64> {
        let d = Gamma::new(shape, 1.0)
            .ok()
            .filter(|_| shape > 0.0 && shape.is_finite())
            .ok_or_else(|| invalid("gamma", format!("shape must be positive, got {shape}")))?;
        Ok(d.sample(&mut self.inner))
    }

    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        let d = Beta::new(a, b)
            .ok()
            .filter(|_| a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite())
            .ok_or_else(|| invalid("beta", format!("shapes must be positive, got ({a}, {b})")))?;
        Ok(d.sample(&mut self.inner).clamp(0.0, 1.0))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(SeededRng::derive(7, 1).next_u64(), SeededRng::derive(7, 2).next_u64());
    }

    #[test]
    fn below_in_range_and_shuffle_is_permutation() {
        let mut r = SeededRng::new(3);
        for n in 1..20 {
            for _ in 0..50 {
                assert!(r.below(n) < n);
            }
        }
        let mut v: Vec<usize> = (0..100).collect();
        r.shuffle(&mut v);
        let mut s = v.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
        assert_ne!(v, s);
    }

    #[test]
    fn normal_moments() {
        let mut r = SeededRng::new(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn gamma_mean_matches_shape() {
        let mut r = SeededRng::new(5);
        for shape in [0.4, 0.5, 1.0, 2.5] {
            let n = 50_000;
            let mean = (0..n).map(|_| r.gamma(shape).unwrap()).sum::<f64>() / n as f64;
            assert!((mean - shape).abs() < 0.03 * shape.max(1.0), "shape {shape}: {mean}");
        }
        assert!(r.gamma(0.0).is_err());
        assert!(r.gamma(-1.0).is_err());
    }
}
