//! Named, seeded random substreams.
//!
//! Every consumer of randomness derives its generator from the run seed plus
//! a stable stream name (and optionally an index), so results do not depend
//! on the order in which workers happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a over the stream name; stable across platforms and releases.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream name.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix(seed ^ splitmix(name_hash(name)))
}

/// Generator for stream `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, name))
}

/// Generator for the `index`-th member of stream `name`, e.g. one per input
/// row or one per client.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(derive_seed(seed, name));
    rng.set_stream(index);
    rng
}

/// Stable 64-bit key for an identifier such as a segment id, usable as the
/// index of an indexed stream.
pub fn key_of(id: &str) -> u64 {
    splitmix(name_hash(id))
}
