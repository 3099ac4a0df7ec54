//! Labeled, splittable seed streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` (rand_chacha 0.9)
//! seeded by [`SeedStream::derive`]. A child seed is a SplitMix64 mix of the
//! parent seed, an FNV-1a hash of a component label and an index, so the
//! stream a replicate sees depends only on `(master seed, label, index)` and
//! never on thread scheduling.
//!
//! Distribution samplers are those of rand 0.9 / rand_distr 0.5:
//! `StandardNormal` (ziggurat), `Uniform` and `Bernoulli`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Name and version of the generator, echoed into run manifests.
pub const GENERATOR: &str = "chacha8/splitmix64-labels/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn derive(&self, label: &str, index: u64) -> u64 {
        let h = splitmix64(self.seed);
        let h = splitmix64(h ^ fnv1a(label));
        splitmix64(h ^ index)
    }

    pub fn child(&self, label: &str, index: u64) -> SeedStream {
        SeedStream::new(self.derive(label, index))
    }

    pub fn rng(&self, label: &str, index: u64) -> Rng {
        ChaCha8Rng::seed_from_u64(self.derive(label, index))
    }
}
