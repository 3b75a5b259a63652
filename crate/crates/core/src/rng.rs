//! Named random substreams derived from a single master seed.
//!
//! Every consumer of randomness asks for `substream(master, label, index)`.
//! The master seed keys a ChaCha8 generator and `(label, index)` selects the
//! 64-bit stream id, so streams are independent of scheduling order and of
//! how many draws any other stream consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_id(label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then mixed with the index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h ^ splitmix64(index))
}

/// Independent generator for `(label, index)` under `master`.
pub fn substream(master: u64, label: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(label, index));
    rng
}

/// Derive a child master seed, for nesting (e.g. replicate -> chain).
pub fn child_seed(master: u64, label: &str, index: u64) -> u64 {
    substream(master, label, index).next_u64()
}
