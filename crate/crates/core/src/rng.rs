//! Deterministic random streams.
//!
//! Every stochastic decision is drawn from a ChaCha8 stream addressed by
//! `(seed, key, purpose, counter)`, so results do not depend on the order in
//! which users are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per counter value inside one stream.
const WORDS_PER_DRAW: u128 = 256;

/// Distinct purposes get distinct ChaCha stream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Reservoir = 1,
    SingleLabel = 2,
    PairSampling = 3,
    Population = 4,
    Stream = 5,
    EvalSet = 6,
    Oracle = 7,
    Init = 8,
    Verify = 9,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a per-key stream, e.g. one user id under a global seed.
pub fn key_seed(seed: u64, key: u64) -> u64 {
    mix64(seed ^ mix64(key.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// A generator positioned at draw `counter` of the `(seed, key, purpose)` stream.
pub fn keyed(seed: u64, key: u64, purpose: Purpose, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key_seed(seed, key));
    rng.set_stream(purpose as u64);
    rng.set_word_pos(u128::from(counter) * WORDS_PER_DRAW);
    rng
}

/// A long-running generator for bulk draws (population, stream, oracle samples).
pub fn bulk(seed: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    rng.set_stream(purpose as u64);
    rng
}
