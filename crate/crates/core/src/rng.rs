//! Seeded random streams.
//!
//! Every stochastic step draws from a named substream of a single run seed,
//! so adding a stage never perturbs the numbers another stage sees.
//!
//! The block-permutation generator is SplitMix64 (Steele, Lea & Flood),
//! chosen because it is a tiny counter-based generator that other
//! implementations can reproduce bit-exactly:
//!
//! ```text
//! state  = state + 0x9E3779B97F4A7C15            (wrapping)
//! z      = (state ^ (state >> 30)) * 0xBF58476D1CE4E5B9
//! z      = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output = z ^ (z >> 31)
//! ```
//!
//! Substream seeds are `SplitMix64(seed ^ fnv1a64(name)).next_u64()`, with
//! FNV-1a using offset basis 0xCBF29CE484222325 and prime 0x100000001B3 over
//! the UTF-8 bytes of the name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(SPLITMIX_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
        z ^ (z >> 31)
    }

    /// Uniform integer in `[0, n)` by rejection: draws below
    /// `(2^64 - n) mod n` are discarded, the rest are reduced mod `n`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }
}

pub fn fnv1a64(name: &str) -> u64 {
    name.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Seed of the substream called `name` under `seed`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    SplitMix64::new(seed ^ fnv1a64(name)).next_u64()
}

/// A ChaCha8 generator for the named substream.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}
