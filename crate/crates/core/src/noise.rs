//! Seeded Gaussian noise.
//!
//! ChaCha20 keyed with the seed as little-endian bytes (zero padded to 32
//! bytes), one ChaCha stream per independent draw sequence. Each pair of
//! standard normals comes from the Box–Muller transform of two 53-bit
//! uniforms `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`:
//! `z0 = √(-2 ln u1) cos 2πu2`, `z1 = √(-2 ln u1) sin 2πu2`.

use std::f64::consts::TAU;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate.
    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// Adds `std`-scaled deviates to every entry of `values`, in order.
    pub fn perturb(&mut self, values: &mut [f64], std: f64) {
        for v in values {
            *v += std * self.next_standard();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed_and_stream() {
        let a: Vec<f64> = {
            let mut g = GaussianStream::new(7, 0);
            (0..10).map(|_| g.next_standard()).collect()
        };
        let mut g = GaussianStream::new(7, 0);
        let b: Vec<f64> = (0..10).map(|_| g.next_standard()).collect();
        assert_eq!(a, b);
        let mut g = GaussianStream::new(7, 1);
        assert_ne!(a[0], g.next_standard());
        let mut g = GaussianStream::new(8, 0);
        assert_ne!(a[0], g.next_standard());
    }

    #[test]
    fn moments() {
        let mut g = GaussianStream::new(42, 3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_standard()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64 / (var * var);
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
        assert!((kurt - 3.0).abs() < 0.05);
    }
}
