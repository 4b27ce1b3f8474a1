//! Keyed random streams.
//!
//! Every consumer of randomness derives its generator from a `(seed, stream,
//! index)` triple. The seed keys a ChaCha8 generator and the stream/index pair
//! selects one of its 2^64 independent streams, so e.g. the noise drawn at
//! step 17 never depends on how many draws the shuffler made before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness. Each one owns a disjoint family of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Stream {
    Init = 1,
    Noise = 2,
    Shuffle = 3,
    Poisson = 4,
    Augment = 5,
    Undersample = 6,
    Split = 7,
    Attack = 8,
    Game = 9,
    Bootstrap = 10,
    Synthetic = 11,
}

/// Deterministic generator for `(seed, stream, index)`.
pub fn keyed(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 8 bits of stream tag, 56 bits of index.
    rng.set_stream(((stream as u64) << 56) ^ (index & 0x00ff_ffff_ffff_ffff));
    rng
}

/// Derive a child seed, used when a component needs a whole seed rather than a
/// stream (e.g. one attack repetition that itself shuffles several pools).
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    use rand::RngCore;
    keyed(seed, stream, index).next_u64()
}
