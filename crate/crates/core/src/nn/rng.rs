//! Deterministic random streams.
//!
//! Generator: xoshiro256** whose 256-bit state is filled with four successive
//! SplitMix64 outputs of the 64-bit seed. Uniforms in `[0, 1)` take the top 53
//! bits of a 64-bit output: `(x >> 11) * 2^-53`.
//!
//! Normal variates use the Box–Muller transform. Each pair of uniforms
//! `(u1, u2)` (with `u1` mapped to `(0, 1]` as `1 - u`) yields two variates,
//! `r cos(2π u2)` first and `r sin(2π u2)` second, `r = sqrt(-2 ln u1)`.
//!
//! Independent streams come from [`split_seed`]:
//! `split(base, id) = mix(base + (id + 1) * 0x9E3779B97F4A7C15)` where `mix` is the
//! SplitMix64 output finalizer.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::{NnError, Tensor};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `id` from `base`.
pub fn split_seed(base: u64, id: u64) -> u64 {
    splitmix_finalize(base.wrapping_add(id.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Seeded random stream. Cloning forks an identical copy of the stream.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: Xoshiro256StarStar,
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: Xoshiro256StarStar::seed_from_u64(seed), spare_normal: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh stream seeded by `split_seed(self.seed, id)`; does not advance `self`.
    pub fn split(&self, id: u64) -> RngState {
        RngState::new(split_seed(self.seed, id))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Fisher–Yates permutation of `0..n`, swapping from the back.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

/// Tensor with i.i.d. `N(mean, std²)` entries, filled in row-major order.
pub fn normal_init(shape: &[usize], mean: f64, std: f64, rng: &mut RngState) -> Result<Tensor, NnError> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(NnError::InvalidArgument(format!("normal_init: std must be finite and >= 0, got {std}")));
    }
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(NnError::InvalidShape(shape.to_vec()));
    }
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| mean + std * rng.standard_normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from an independent Python implementation of
    // SplitMix64 + xoshiro256** + Box–Muller.
    #[test]
    fn matches_reference_stream() {
        let mut rng = RngState::new(42);
        assert_eq!(rng.next_u64(), 1_546_998_764_402_558_742);
        assert_eq!(rng.next_u64(), 6_990_951_692_964_543_102);
        assert_eq!(rng.next_u64(), 12_544_586_762_248_559_009);
    }

    #[test]
    fn box_muller_matches_reference() {
        let mut rng = RngState::new(42);
        let t = normal_init(&[4], 0.0, 1.0, &mut rng).unwrap();
        let expected = [-0.303263064678738, 0.28846173882942383, 1.3438117634372806, -0.6879751798977497];
        for (got, want) in t.data().iter().zip(expected) {
            assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn split_matches_reference() {
        assert_eq!(split_seed(42, 0), 13_679_457_532_755_275_413);
        assert_eq!(split_seed(42, 1), 2_949_826_092_126_892_291);
        assert_eq!(split_seed(42, 2), 5_139_283_748_462_763_858);
    }

    #[test]
    fn zero_std_gives_constant() {
        let mut rng = RngState::new(7);
        let t = normal_init(&[2, 2], 0.0, 0.0, &mut rng).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
        let t = normal_init(&[3], 1.5, 0.0, &mut rng).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn negative_std_rejected() {
        let mut rng = RngState::new(7);
        assert!(matches!(normal_init(&[2], 0.0, -1.0, &mut rng), Err(NnError::InvalidArgument(_))));
        assert!(normal_init(&[2], 0.0, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn sample_moments() {
        let mut rng = RngState::new(2024);
        let t = normal_init(&[100_000], 0.0, 0.02, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((var.sqrt() - 0.02).abs() < 0.002, "std {}", var.sqrt());
    }

    #[test]
    fn identical_seed_bit_identical() {
        let a = normal_init(&[5, 7], 0.1, 0.3, &mut RngState::new(99)).unwrap();
        let b = normal_init(&[5, 7], 0.1, 0.3, &mut RngState::new(99)).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn permutation_is_bijection() {
        let mut rng = RngState::new(3);
        let mut p = rng.permutation(1000);
        p.sort_unstable();
        assert!(p.iter().enumerate().all(|(i, &v)| i == v));
    }
}
