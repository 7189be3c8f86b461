//! Seeded randomness shared by the stochastic stages.
//!
//! Everything random in the pipeline (shuffles, parameter init, dropout)
//! flows from a single `u64` seed plus a per-purpose salt, so a full run is
//! reproducible across platforms. The shuffle is a hand-rolled Fisher-Yates
//! over a ChaCha20 stream; it does not depend on `rand`'s distribution
//! internals and therefore survives dependency upgrades.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Derive a ChaCha20 RNG from the pipeline seed and a purpose-specific salt.
pub fn seeded(seed: u64, salt: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&salt.to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Unbiased integer in `[0, bound)` by rejection sampling.
pub fn below(rng: &mut ChaCha20Rng, bound: u64) -> u64 {
    assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha20Rng) {
    for i in (1..items.len()).rev() {
        let j = below(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Uniform f64 in `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + unit * (hi - lo)
}
