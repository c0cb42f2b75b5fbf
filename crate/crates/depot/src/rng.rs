//! Deterministic randomness: a ChaCha stream keyed on a digest, an
//! unbiased bounded sampler, and Floyd's algorithm for distinct draws.
//! Hand-rolled so challenge and committee derivation stay stable across
//! dependency upgrades.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::hash::Digest;

pub(crate) fn rng_from_digest(seed: &Digest) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(seed.0)
}

/// Uniform draw from `[0, bound)` by rejection sampling. `bound` must be
/// positive.
pub(crate) fn uniform_u32(rng: &mut ChaCha20Rng, bound: u32) -> u32 {
    debug_assert!(bound > 0);
    let bound = u64::from(bound);
    let zone = (1u64 << 32) - ((1u64 << 32) % bound);
    loop {
        let x = u64::from(rng.next_u32());
        if x < zone {
            return (x % bound) as u32;
        }
    }
}

/// `k` distinct values from `[0, population)` via Floyd's sampling,
/// returned sorted ascending. Uniform over k-subsets. `k` is clamped to
/// the population size.
pub(crate) fn sample_distinct(rng: &mut ChaCha20Rng, population: u32, k: u32) -> Vec<u32> {
    let k = k.min(population);
    let mut picked: Vec<u32> = Vec::with_capacity(k as usize);
    for j in population - k..population {
        let t = uniform_u32(rng, j + 1);
        if picked.contains(&t) {
            picked.push(j);
        } else {
            picked.push(t);
        }
    }
    picked.sort_unstable();
    picked
}

/// Deterministic Bernoulli draw: true with probability `p`.
pub(crate) fn bernoulli(rng: &mut ChaCha20Rng, p: f64) -> bool {
    (rng.next_u64() as f64 / 18_446_744_073_709_551_616.0) < p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::sha256;

    #[test]
    fn sample_is_sorted_and_distinct() {
        let mut rng = rng_from_digest(&sha256("t", b"1"));
        for _ in 0..100 {
            let s = sample_distinct(&mut rng, 50, 7);
            assert_eq!(s.len(), 7);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&x| x < 50));
        }
    }

    #[test]
    fn sample_clamps_to_population() {
        let mut rng = rng_from_digest(&sha256("t", b"2"));
        let s = sample_distinct(&mut rng, 5, 20);
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn uniform_stays_in_bounds() {
        let mut rng = rng_from_digest(&sha256("t", b"3"));
        for _ in 0..10_000 {
            assert!(uniform_u32(&mut rng, 7) < 7);
        }
    }

    #[test]
    fn bernoulli_extremes() {
        let mut rng = rng_from_digest(&sha256("t", b"4"));
        assert!((0..100).all(|_| bernoulli(&mut rng, 1.0)));
        assert!((0..100).all(|_| !bernoulli(&mut rng, 0.0)));
    }
}
