//! Seed derivation for independent, counter-addressed random substreams.
//!
//! Every stochastic decision in the pipeline (augmentation draws, per-element
//! jitter noise, dropout masks, shuffles) pulls from a [`ChaCha8Rng`] whose seed
//! is a hash of the master seed and a short key path. Two call sites with
//! different keys never share a stream, and the same key always reproduces the
//! same numbers regardless of call order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping substreams of different purposes apart.
pub mod tag {
    pub const AUG_DRAW: u64 = 0x01;
    pub const AUG_NOISE: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const SHUFFLE: u64 = 0x04;
    pub const DROP_PATH: u64 = 0x05;
    pub const DROPOUT: u64 = 0x06;
    pub const SYNTH: u64 = 0x07;
    pub const FOLDS: u64 = 0x08;
    pub const PERTURB: u64 = 0x09;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `seed` and `keys` into a single 64-bit stream seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}
