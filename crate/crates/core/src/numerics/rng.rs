//! Seeded, stream-addressable random number generation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ChaCha8 generator keyed by `(seed, stream_id)`.
///
/// The same pair always yields the same sequence; different stream ids give
/// independent ChaCha streams under the same key.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        SeededRng { seed, stream_id, inner }
    }

    /// Stream addressed by a path of indices, e.g. `(replicate, chain, subject)`.
    pub fn for_path(seed: u64, path: &[u64]) -> Self {
        Self::new(seed, stream_key(path))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A child stream derived from this generator's key and `index`.
    pub fn substream(&self, index: u64) -> Self {
        Self::new(self.seed, stream_key(&[self.stream_id, index]))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a path of indices into one stream id.
pub fn stream_key(path: &[u64]) -> u64 {
    path.iter().fold(0x5851_f42d_4c95_7f2d, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stable 64-bit FNV-1a hash, used to key streams by subject identifiers.
pub fn hash_label(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
