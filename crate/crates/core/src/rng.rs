//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`RngSeed`], which wraps
//! ChaCha8 (`rand_chacha::ChaCha8Rng`). The 64-bit seed is expanded with
//! `seed_from_u64`, and independent consumers select distinct ChaCha stream
//! numbers so that adding draws in one stage never shifts another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Generator on ChaCha stream `stream` of this seed.
    pub fn stream(self, stream: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// A child seed for a named sub-task, e.g. one of several extractor networks.
    pub fn derive(self, tag: u64) -> RngSeed {
        // splitmix64 finalizer over seed ^ tag
        let mut z = self.0 ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl Default for RngSeed {
    fn default() -> Self {
        RngSeed(42)
    }
}
