//! Seed derivation for the simulator's independent random streams.
//!
//! Each consumer of randomness (topology build, per-hop loss draws, sensor
//! noise, lifecycle trajectories) gets its own stream derived from the
//! scenario seed, so adding draws in one subsystem never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; stable across platforms and releases.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a sub-seed for a named domain from the scenario seed.
pub fn sub_seed(seed: u64, domain: u64) -> u64 {
    mix64(seed ^ mix64(domain))
}

/// A seeded stream for one domain.
pub fn stream(seed: u64, domain: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, domain))
}

/// Domain tags for [`sub_seed`]/[`stream`].
pub mod domain {
    pub const TOPOLOGY: u64 = 1;
    pub const TRANSMIT: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const CHANNELS: u64 = 4;
    pub const LIFECYCLE: u64 = 5;
}

/// Deterministic hash of a string, for folding identifiers into seeds.
pub fn mix_str(seed: u64, s: &str) -> u64 {
    let mut acc = seed;
    for b in s.as_bytes() {
        acc = mix64(acc ^ u64::from(*b));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = stream(42, domain::TRANSMIT);
        let mut b = stream(42, domain::TRANSMIT);
        let mut c = stream(42, domain::NOISE);
        let xa = a.next_u64();
        assert_eq!(xa, b.next_u64());
        assert_ne!(xa, c.next_u64());
    }

    #[test]
    fn mix_str_depends_on_every_byte() {
        assert_ne!(mix_str(1, "n17"), mix_str(1, "n18"));
        assert_ne!(mix_str(1, "n17"), mix_str(2, "n17"));
    }
}
