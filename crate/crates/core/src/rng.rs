//! Counter-keyed random streams.
//!
//! Every stochastic draw in a run is taken from a stream identified by
//! `(seed, purpose, a, b, c)`. Streams are independent of evaluation order,
//! so parallel workers reproduce the same draws as a sequential run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; keeps streams for different purposes disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    TrainMask = 2,
    EvalMask = 3,
    Shuffle = 4,
    Synth = 5,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key tuple into a 64-bit stream key.
pub fn stream_key(seed: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> u64 {
    [purpose as u64, a, b, c].into_iter().fold(splitmix64(seed), |h, w| splitmix64(h ^ splitmix64(w)))
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, purpose, a, b, c))
}
