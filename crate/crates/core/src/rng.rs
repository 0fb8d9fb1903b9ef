//! Counter-keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 64-bit seed is a splitmix hash
//! of `(seed, tag, key…)`. Streams for different walkers, edges or time
//! slices are therefore independent of evaluation order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub(crate) const TAG_WALKER: u64 = 0x5741_4c4b;
pub(crate) const TAG_EDGE: u64 = 0x4544_4745;
pub(crate) const TAG_TIME: u64 = 0x5449_4d45;
pub(crate) const TAG_CORPUS: u64 = 0x434f_5250;
pub(crate) const TAG_SUITE: u64 = 0x5355_4954;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix(seed, keys))
}

/// Stream of walker `id` in an ensemble seeded by `seed`.
pub fn walker_rng(seed: u64, id: u64) -> StreamRng {
    stream(seed, &[TAG_WALKER, id])
}
