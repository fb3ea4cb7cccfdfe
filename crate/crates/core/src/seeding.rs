//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is a ChaCha8 generator keyed by a
//! 64-bit seed and selected by a 64-bit stream id. Seeds for sub-tasks are
//! derived from the master seed by hashing `(master, domain tag, index)` with
//! SplitMix64, so repetition `r` always sees the same randomness no matter
//! how many repetitions run or in which order they finish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags separating the seed families of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum SeedDomain {
    /// Initial parameters `W_0`, shared by all branches and repetitions.
    Init = 1,
    /// Data drawn for one repetition (supersample, `U`, `J`, evaluation set).
    Data = 2,
    /// Langevin noise for one branch of one repetition.
    Noise = 3,
    /// Seeded random finite problems in property tests and acceptance runs.
    Problem = 4,
}

/// One round of SplitMix64.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `(domain, index)` below `master`.
pub fn derive_seed(master: u64, domain: SeedDomain, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(domain as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// ChaCha8 generator keyed by `seed` on stream `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
