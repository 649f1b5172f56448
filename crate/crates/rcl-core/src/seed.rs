//! Deterministic seed derivation.
//!
//! One master seed drives an entire experiment. Every randomized unit of
//! work (a replication, a grid cell, a picking round) derives its own seed
//! by hashing the master seed together with a path of counters, so
//!
//! - independent units get statistically independent streams,
//! - any single unit can be re-run in isolation, and
//! - parallel execution order cannot change results.
//!
//! The hash is the SplitMix64 finalizer, a bijective 64-bit mixer with full
//! avalanche; it is the standard choice for seeding from counters.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalization step: bijective, avalanching 64-bit mix.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of counters.
///
/// The path encodes *where* in the experiment tree the consumer sits, e.g.
/// `derive(master, &[REP, m, cell])` for grid cell `cell` of replication `m`.
/// Each path component is folded in through SplitMix64, so distinct paths
/// yield distinct, well-mixed seeds.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &component in path {
        state = splitmix64(state ^ splitmix64(component.wrapping_add(0x632b_e5ab)));
    }
    state
}

/// Stream tags used as the first path component, one per consumer kind.
///
/// Keeping the tags in one place guarantees that, say, the split
/// permutation and the DGP draws of the same replication never collide.
pub mod stream {
    /// Data generation for a replication.
    pub const DGP: u64 = 1;
    /// Train/validation/test permutation.
    pub const SPLIT: u64 = 2;
    /// Nuisance fitting (forest bootstrap, etc.).
    pub const FIT: u64 = 3;
    /// RCL random-picking rounds.
    pub const PICK: u64 = 4;
    /// Hyperparameter tuning dataset.
    pub const TUNE: u64 = 5;
    /// Verifier sampling.
    pub const VERIFY: u64 = 6;
}

/// The crate-standard RNG, seeded from a derived seed.
///
/// ChaCha8 is counter-based, portable, and reproducible across platforms;
/// all randomized routines in this crate construct their generator here.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
