//! Seed derivation. Every random stream in a run is a pure function of the
//! run seed and a stream label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream labels, so that logically distinct streams never collide.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    EncoderInit = 1,
    HeadInit = 2,
    DomainHeadRow = 3,
    Noise = 4,
    Shuffle = 5,
    Synthetic = 6,
    ProxySplit = 7,
    Theory = 8,
    SourceSubset = 9,
}

/// Derives a child seed from `base`, a stream label, and up to two indices.
pub fn derive(base: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(base ^ 0x5353_4153_0000_0000);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(17))
}

pub fn stream_rng(base: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, stream, a, b))
}
