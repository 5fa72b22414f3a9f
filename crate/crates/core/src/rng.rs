//! Seeded random streams for reproducible runs.
//!
//! Every source of randomness in this crate is a ChaCha8 generator keyed
//! from a single 64-bit master seed. Independent streams — initial states,
//! the trajectory's pair draws, detector initialization, per-replication
//! trajectories — are derived by mixing the master seed with a stream index
//! through SplitMix64, so a run is a pure function of `(config, seed)` and
//! replications can fan out across threads without sharing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream indices used by the experiment drivers. Anything outside this
/// module that needs its own stream should pick an index ≥ `REPLICATION`
/// plus its replication count to avoid collisions.
pub mod stream {
    /// Initial opinions of the regular agents.
    pub const INIT: u64 = 0;
    /// Pair activations along the main trajectory.
    pub const TRAJECTORY: u64 = 1;
    /// Detector initialization (random labels and parameter guesses).
    pub const DETECTOR: u64 = 2;
    /// Base index for replicated trajectories; replication `r` draws from
    /// stream `REPLICATION + r`.
    pub const REPLICATION: u64 = 16;
}

/// One SplitMix64 step (Steele, Lea & Flood's mixer). Advances `state` and
/// returns a well-scrambled 64-bit value.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the child seed for `(master, stream)`. Two SplitMix64 steps keyed
/// by the master seed, with the stream index folded in between, so distinct
/// streams decorrelate even for adjacent master seeds.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut state = master;
    let a = splitmix64(&mut state);
    state ^= stream.wrapping_mul(0xd6e8_feb8_6659_fd93);
    let b = splitmix64(&mut state);
    a ^ b.rotate_left(17)
}

/// A ChaCha8 generator for the given master seed and stream index.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}
