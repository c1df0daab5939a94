//! Named random sub-streams derived from one experiment seed.
//!
//! Every consumer asks for `(name, index)`; streams with different names or
//! indices never share state, so adding draws in one place leaves all other
//! streams untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENV: &str = "env";
pub const VALIDATION_SET: &str = "validation-set";
pub const ROLLOUT: &str = "rollout";
pub const FILTER: &str = "filter";
pub const SHUFFLE: &str = "shuffle";
pub const EVAL: &str = "eval";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A 64-bit seed for `(name, index)`.
    pub fn derive(&self, name: &str, index: u64) -> u64 {
        splitmix(splitmix(self.seed ^ fnv1a(name.as_bytes())) ^ splitmix(index.wrapping_add(0x5851_f42d)))
    }

    pub fn rng(&self, name: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(name, index))
    }

    /// Child streams scoped under `name` (e.g. one per training stage).
    pub fn child(&self, name: &str, index: u64) -> SeedStreams {
        SeedStreams::new(self.derive(name, index))
    }
}
