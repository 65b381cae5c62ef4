//! Seed derivation and per-task random substreams.
//!
//! Every stochastic task (a training path, an exploration episode, one outer
//! evaluation path, one inner simulation set) draws from its own ChaCha stream,
//! keyed by a base seed, a purpose tag and an index. Results therefore do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    TrainPath = 1,
    Explore = 2,
    Batch = 3,
    Init = 4,
    OuterPath = 5,
    Inner = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a named child seed, e.g. `derive_seed(eval, "lower")`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the parent seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Generator for `(seed, purpose, index)`.
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed.wrapping_add(splitmix64(purpose as u64)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Index for an inner simulation set launched from outer path `outer` at step `t`.
pub fn inner_index(outer: u64, t: usize) -> u64 {
    (outer << 20) | (t as u64 & 0xF_FFFF)
}
