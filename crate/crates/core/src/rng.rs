//! Deterministic random streams.
//!
//! Every random task draws from its own ChaCha20 stream, keyed by the user
//! seed and a purpose tag, with the task index as the stream id. Streams for
//! different tasks never overlap, so results do not depend on scheduling
//! order and the first `m` subjects of an `n`-subject simulation equal an
//! `m`-subject simulation with the same seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// What a stream is used for; part of the key so purposes never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Subject = 1,
    Start = 2,
    Bootstrap = 3,
    Replication = 4,
    WarpResample = 5,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// A fresh 64-bit seed for task `index`, e.g. the simulation seed of one
/// replication.
pub fn derived_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    stream(seed, purpose, index).next_u64()
}
