//! Seeded random streams.
//!
//! Every random choice in the crate draws from a ChaCha stream derived from a
//! single user seed and a purpose name, so changing how one component consumes
//! randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-stream identifiers used across the crate.
pub mod streams {
    pub const SYNTH: &str = "synth";
    pub const SPLIT: &str = "split";
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "batch-shuffle";
    pub const TRIPLETS: &str = "triplets";
}

/// Returns the generator for `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Same as [`stream`] with an extra integer index, e.g. a split number.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
