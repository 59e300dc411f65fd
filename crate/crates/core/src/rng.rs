//! Seeded random streams.
//!
//! Every random quantity in a run descends from one 64-bit seed. A substream
//! is the ChaCha8 generator keyed by that seed with its stream id set to a
//! SplitMix64 fold of a path of integers (for example `[CHAIN, 3]` or
//! `[REPLICATION, 17, CHAIN, 0]`). Distinct paths give non-overlapping
//! streams, so chains and replications can run in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Path tags.
pub const CHAIN: u64 = 1;
pub const REPLICATION: u64 = 2;
pub const DATA: u64 = 3;
pub const START: u64 = 4;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_id(path: &[u64]) -> u64 {
    path.iter().fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for the substream at `path` under `seed`.
pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(path));
    rng
}

/// A child seed for the substream at `path`, for APIs that take a seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    splitmix64(seed ^ stream_id(path))
}
