//! Seeded random number streams.
//!
//! Every stochastic path in the crate draws from [`Xoshiro256PlusPlus`]
//! seeded through `seed_from_u64`. Independent streams (one per MCMC chain)
//! are obtained from the master stream with the generator's jump function,
//! which advances it by 2^128 steps.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator used throughout the crate.
pub type FbstRng = Xoshiro256PlusPlus;

/// Master stream for `seed`.
pub fn seeded(seed: u64) -> FbstRng {
    FbstRng::seed_from_u64(seed)
}

/// The `index`-th independent stream derived from `seed`.
///
/// Stream 0 is the master stream itself; stream `i` is the master stream
/// jumped `i` times.
pub fn stream(seed: u64, index: usize) -> FbstRng {
    let mut rng = seeded(seed);
    for _ in 0..index {
        rng.jump();
    }
    rng
}
