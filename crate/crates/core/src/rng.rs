//! Keyed random streams.
//!
//! Every random draw in the simulator comes from a ChaCha8 stream whose key is
//! built from `(seed, purpose, a, b)`. Streams never share state, so the same
//! clients and minibatches are drawn no matter which algorithm consumes them or
//! in which order client simulations are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Projector = 2,
    ClientSampling = 3,
    Minibatch = 4,
    Probe = 5,
    Replay = 6,
}

pub type Stream = ChaCha8Rng;

/// Builds the stream for `(seed, purpose, a, b)`.
///
/// The four words form the 256-bit ChaCha key directly, so distinct tuples
/// give unrelated streams.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> Stream {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Minibatch stream for one client in one round; local steps draw from it in order.
pub fn minibatch_stream(seed: u64, round: usize, client: usize) -> Stream {
    stream(seed, Purpose::Minibatch, round as u64, client as u64)
}
