//! Seed derivation.
//!
//! Every random stream in a run is derived from one master seed by hashing a
//! stream name and a counter. Streams never share state, so adding a new stream
//! (a new benchmark variant, say) leaves every other stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the `index`-th draw of the stream `name` under `master`.
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    let stream = splitmix64(master ^ splitmix64(fnv1a(name)));
    splitmix64(stream ^ splitmix64(index.wrapping_mul(GOLDEN)))
}

/// A named sub-stream of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    base: u64,
}

impl SeedStream {
    pub fn new(master: u64, name: &str) -> Self {
        Self {
            base: derive_seed(master, name, 0),
        }
    }

    /// Nested stream, e.g. `stream.child("iter").child(...)`.
    pub fn child(&self, name: &str) -> Self {
        Self::new(self.base, name)
    }

    pub fn child_indexed(&self, name: &str, index: u64) -> Self {
        Self {
            base: derive_seed(self.base, name, index),
        }
    }

    pub fn seed(&self, index: u64) -> u64 {
        derive_seed(self.base, "#", index)
    }

    pub fn rng(&self, index: u64) -> SimRng {
        SimRng::seed_from_u64(self.seed(index))
    }
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
