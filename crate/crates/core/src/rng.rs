//! Counter-based Gaussian noise streams.
//!
//! Every standard normal draw is addressed by `(seed, lane, path, step)`. A path owns one
//! ChaCha8 stream (`stream = lane << 40 | path`) and step `k` reads the Box–Muller pair stored at
//! 64-bit words `2⌊k/2⌋` and `2⌊k/2⌋ + 1`. Any step can therefore be regenerated without
//! replaying the path, and results never depend on how paths are scheduled across workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

const PATH_BITS: u32 = 40;

/// Keyed source of independent per-path Gaussian streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    pub seed: u64,
    pub lane: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, lane: 0 }
    }

    /// Same seed, different family of streams. Lanes separate noise used for unrelated purposes
    /// (e.g. window simulations at different δ) so that they never share draws.
    pub fn with_lane(self, lane: u64) -> Self {
        Self { lane, ..self }
    }

    pub fn stream_id(&self, path: usize) -> u64 {
        debug_assert!((path as u64) < (1u64 << PATH_BITS));
        (self.lane << PATH_BITS) | path as u64
    }

    /// Stream for one path, positioned at step 0.
    pub fn path(&self, path: usize) -> PathNoise {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id(path));
        PathNoise {
            rng,
            next_step: 0,
            spare: None,
        }
    }

    /// Standard normal draw for `(path, step)`.
    pub fn normal_at(&self, path: usize, step: u64) -> f64 {
        let mut p = self.path(path);
        p.seek(step);
        p.next_normal()
    }
}

/// Sequential reader over one path's stream.
#[derive(Debug, Clone)]
pub struct PathNoise {
    rng: ChaCha8Rng,
    next_step: u64,
    spare: Option<f64>,
}

impl PathNoise {
    /// Positions the reader so that the next draw is the one for `step`.
    pub fn seek(&mut self, step: u64) {
        let pair = step / 2;
        // two u64 per pair, two u32 words per u64
        self.rng.set_word_pos(u128::from(pair) * 4);
        self.spare = None;
        self.next_step = pair * 2;
        if step % 2 == 1 {
            self.next_normal();
        }
    }

    pub fn step(&self) -> u64 {
        self.next_step
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            self.next_step += 1;
            return z;
        }
        let w1 = self.rng.next_u64();
        let w2 = self.rng.next_u64();
        let u1 = ((w1 >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = (w2 >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        self.next_step += 1;
        r * c
    }

    /// Brownian increments `√dt · N(0,1)` for the next `n` steps.
    pub fn increments<T: Real>(&mut self, n: usize, dt: T) -> Vec<T> {
        let sd = dt.sqrt();
        (0..n).map(|_| sd * T::lit(self.next_normal())).collect()
    }

    pub fn fill_increments<T: Real>(&mut self, out: &mut [T], dt: T) {
        let sd = dt.sqrt();
        for v in out.iter_mut() {
            *v = sd * T::lit(self.next_normal());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_access_matches_sequential() {
        let src = NoiseSource::new(7).with_lane(3);
        let mut seq = src.path(11);
        let draws: Vec<f64> = (0..9).map(|_| seq.next_normal()).collect();
        for (k, &z) in draws.iter().enumerate() {
            assert_eq!(src.normal_at(11, k as u64).to_bits(), z.to_bits());
        }
        let mut p = src.path(11);
        p.seek(5);
        assert_eq!(p.next_normal().to_bits(), draws[5].to_bits());
        assert_eq!(p.next_normal().to_bits(), draws[6].to_bits());
    }

    #[test]
    fn streams_differ_across_paths_and_lanes() {
        let a = NoiseSource::new(1);
        assert_ne!(a.normal_at(0, 0), a.normal_at(1, 0));
        assert_ne!(a.normal_at(0, 0), a.with_lane(1).normal_at(0, 0));
        assert_ne!(a.normal_at(0, 0), NoiseSource::new(2).normal_at(0, 0));
    }

    #[test]
    fn moments_are_standard_normal() {
        let src = NoiseSource::new(42);
        let n = 200_000;
        let mut p = src.path(0);
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let z = p.next_normal();
            s1 += z;
            s2 += z * z;
            s4 += z * z * z * z;
        }
        let nf = n as f64;
        assert!((s1 / nf).abs() < 4.0 / nf.sqrt());
        assert!((s2 / nf - 1.0).abs() < 4.0 * 2f64.sqrt() / nf.sqrt());
        assert!((s4 / nf - 3.0).abs() < 4.0 * 96f64.sqrt() / nf.sqrt());
    }
}
