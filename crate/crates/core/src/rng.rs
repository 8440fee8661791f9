//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a root seed and a stream path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_EXTRACTOR: u64 = 1;
pub(crate) const STREAM_CENTERS: u64 = 2;
pub(crate) const STREAM_BATCHES: u64 = 3;
pub(crate) const STREAM_DROPOUT: u64 = 4;
pub(crate) const STREAM_SYNTH: u64 = 5;
pub(crate) const STREAM_AUGMENT: u64 = 6;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(root), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}
