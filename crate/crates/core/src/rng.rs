//! Deterministic generator streams.
//!
//! Every random draw in a run comes from a ChaCha8 stream keyed by
//! `(run seed, purpose, step, member)` with the per-draw index used as the
//! ChaCha stream id. Draws never depend on scheduling order, so parallel and
//! serial execution produce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags keep streams for different uses disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Dataset = 1,
    Subset = 2,
    Init = 3,
    Batch = 4,
    Rollout = 5,
    Select = 6,
    Theory = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the key words into a single 64-bit seed.
pub fn derive_seed(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ (purpose as u64));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

/// Generator for `(seed, purpose, a, b)`, on ChaCha stream `stream`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, a, b));
    rng.set_stream(stream);
    rng
}
