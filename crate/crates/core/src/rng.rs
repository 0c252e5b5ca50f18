//! Seeded random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed and a purpose label, so adding a new consumer never shifts the
//! numbers drawn by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// Well-known purpose labels.
pub mod purpose {
    pub const INIT: &str = "init";
    pub const EPISODES: &str = "episodes";
    pub const SPLITS: &str = "splits";
    pub const OVERSAMPLE: &str = "oversample";
    pub const VALIDATION: &str = "validation";
}

/// Plain generator from a seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child generator for `purpose`: same key as `seeded(seed)` but on a
/// stream selected by a hash of the label.
pub fn child(seed: u64, purpose: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(purpose.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
