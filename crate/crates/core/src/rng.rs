//! Deterministic random substreams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from a
//! root seed plus a (tag, index) pair. Training resumes from a step counter
//! alone because the stream for step `k` never depends on what came before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags never share a substream for the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Step = 3,
    Style = 4,
    Split = 5,
    Toy = 6,
    Eval = 7,
    Oracle = 8,
    Probe = 9,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn substream(seed: u64, tag: Stream, index: u64) -> Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix(seed),
        splitmix(seed ^ splitmix(tag as u64)),
        splitmix(index ^ splitmix((tag as u64) << 32)),
        splitmix(seed.rotate_left(17) ^ index),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
