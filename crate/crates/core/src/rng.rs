//! Seeded random streams.
//!
//! Every stochastic choice in the crate draws from SplitMix64 (Steele, Lea &
//! Flood 2014): a 64-bit state advanced by the golden-gamma increment
//! `0x9e3779b97f4a7c15` and finalised with the `Mix13` variant of the MurmurHash3
//! mixer. The algorithm is small enough to reimplement elsewhere, which keeps
//! sampled patterns and model weights reproducible across implementations.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

pub type Stream = SplitMix64;

pub fn stream(seed: u64) -> Stream {
    SplitMix64::seed_from_u64(seed)
}

/// Derives an independent stream for a labelled purpose.
pub fn substream(seed: u64, label: u64) -> Stream {
    stream(mix(seed ^ mix(label.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
