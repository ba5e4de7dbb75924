//! Seeded, splittable randomness.
//!
//! A [`SeedTree`] is a 64-bit key from which independent child keys are
//! derived by label, so a stochastic step (a gather, a batch order, a weight
//! init) draws from its own stream regardless of what ran before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    pub fn key(&self) -> u64 {
        self.0
    }

    /// Child stream identified by an integer index.
    pub fn child(&self, index: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    /// Child stream identified by a label.
    pub fn named(&self, label: &str) -> Self {
        // FNV-1a, stable across platforms and releases
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.child(h)
    }

    pub fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.0)
    }
}
