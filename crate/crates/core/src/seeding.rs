//! Stable seed derivation.
//!
//! Every random consumer gets its own stream derived from the run seed and a
//! fixed label, so adding a consumer never shifts the draws of another one.
//! Hashing is FNV-1a followed by a SplitMix64 finalizer; both are fixed
//! algorithms, so derived seeds are identical on every platform and toolchain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

/// FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_extend(FNV_OFFSET, bytes)
}

fn fnv1a_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incremental hasher used for seeds and content-addressed ids.
#[derive(Debug, Clone, Copy)]
pub struct StableHasher(u64);

impl Default for StableHasher {
    fn default() -> Self {
        StableHasher(FNV_OFFSET)
    }
}

impl StableHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(mut self, bytes: &[u8]) -> Self {
        // Length prefix keeps ("ab","c") and ("a","bc") apart.
        self.0 = fnv1a_extend(self.0, &(bytes.len() as u64).to_le_bytes());
        self.0 = fnv1a_extend(self.0, bytes);
        self
    }

    pub fn str(self, s: &str) -> Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0 = fnv1a_extend(self.0, &v.to_le_bytes());
        self
    }

    pub fn finish(self) -> u64 {
        splitmix64(self.0)
    }
}

/// Seed for the sub-stream `label` of `seed`.
pub fn derive(seed: u64, label: &str) -> u64 {
    StableHasher::new().u64(seed).str(label).finish()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for the sub-stream `label` of `seed`.
pub fn substream(seed: u64, label: &str) -> ChaCha8Rng {
    rng(derive(seed, label))
}
