//! Seed derivation for reproducible per-worker random streams.
//!
//! Every random draw in a run comes from a ChaCha8 generator seeded by
//! mixing `(seed, worker, round)`. Workers never share a generator, so the
//! draws of one worker are unaffected by anything another worker does.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered tuple of words into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// Stream tags keeping unrelated consumers of the run seed apart.
pub mod tag {
    pub const WORKER: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const CERTIFY: u64 = 4;
}

/// Externally owned random stream of one worker.
///
/// `for_round(t)` always yields the same generator for the same
/// `(seed, worker, t)`, independent of call order or thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    worker: u64,
}

impl RngStream {
    pub fn new(seed: u64, worker: usize) -> Self {
        Self {
            seed,
            worker: worker as u64,
        }
    }

    pub fn worker(&self) -> usize {
        self.worker as usize
    }

    pub fn for_round(&self, round: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(&[tag::WORKER, self.seed, self.worker, round]))
    }
}

/// Generator for a one-off purpose identified by `tag` and `seed`.
pub fn tagged_rng(tag: u64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[tag, seed]))
}
