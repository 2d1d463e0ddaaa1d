//! Deterministic child streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose 256-bit key
//! packs `(master seed, purpose, subset bits, replicate index)` verbatim, so
//! distinct tuples can never share a stream and results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a child stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    JointSample = 1,
    ConditionalSample = 2,
    OuterPoint = 3,
    Bandwidth = 4,
    Reference = 5,
}

pub fn child_rng(seed: u64, purpose: Purpose, subset_bits: u32, replicate: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&(purpose as u32).to_le_bytes());
    key[12..16].copy_from_slice(&subset_bits.to_le_bytes());
    key[16..24].copy_from_slice(&replicate.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
