//! Deterministic RNG plumbing.
//!
//! Everything stochastic in the crate (loss pixel draws, perturbations,
//! synthetic scenes, test scenes) goes through ChaCha8 streams derived from a
//! single user seed, so runs are bit-reproducible for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Root stream for a user-facing seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream for `(seed, a, b)`, e.g. per `(epoch, view)`.
///
/// SplitMix64-style finalizer over the three words; collisions between the
/// handful of streams a run creates are not a practical concern.
pub fn derive(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut x = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

/// Standard normal draw via Box–Muller.
///
/// Implemented inline (rather than pulling in a distributions crate) so the
/// byte stream behind seeded runs never shifts under dependency upgrades.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_stream_separated() {
        let a: Vec<u32> = derive(7, 1, 2).sample_iter(rand::distributions::Standard).take(4).collect();
        let b: Vec<u32> = derive(7, 1, 2).sample_iter(rand::distributions::Standard).take(4).collect();
        let c: Vec<u32> = derive(7, 2, 1).sample_iter(rand::distributions::Standard).take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn standard_normal_moments_are_sane() {
        let mut rng = seeded(11);
        let n = 20_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
