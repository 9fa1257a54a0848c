//! Reproducible random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by
//! `(seed, domain)` and selected by a 64-bit stream index (usually a frame
//! or path number). The key layout is little-endian `seed` in bytes 0..8 and
//! `domain` in bytes 8..16, the remaining key bytes are zero. ChaCha8 is
//! counter based, so a stream produces the same values on every platform and
//! independent of how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Stream domains, so that e.g. the graph and the channel of one frame never
/// share random numbers.
pub mod domain {
    pub const GRAPH: u64 = 0x4752_4150_4800_0001;
    pub const CHANNEL: u64 = 0x4348_414e_0000_0002;
    pub const PEELING: u64 = 0x5045_454c_0000_0003;
    pub const OU: u64 = 0x4f55_0000_0000_0004;
    pub const SDE: u64 = 0x5344_4500_0000_0005;
    pub const ESTIMATE: u64 = 0x4553_5400_0000_0006;
}

/// Returns stream `index` of the generator keyed by `(seed, domain)`.
pub fn substream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Mixes two words into a new seed (splitmix64 finalizer). Used to derive
/// per-frame graph seeds from a run seed.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(substream(7, domain::CHANNEL, 3), |r, _| Some(r.random()))
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(substream(7, domain::CHANNEL, 3), |r, _| Some(r.random()))
            .collect();
        let c: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(substream(7, domain::CHANNEL, 4), |r, _| Some(r.random()))
            .collect();
        let d: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(substream(7, domain::GRAPH, 3), |r, _| Some(r.random()))
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
