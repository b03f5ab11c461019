//! Seed derivation for independent, order-free random streams.
//!
//! Every parallelizable task (a tree, a fold, a bootstrap replication) draws
//! from its own generator seeded by `derive_seed(root, index)`, so results do
//! not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable hash of `(root, stream)`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(root) ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from_seed(seed: u64) -> TaskRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn task_rng(root: u64, stream: u64) -> TaskRng {
    rng_from_seed(derive_seed(root, stream))
}

/// Named streams so unrelated consumers of one root seed never collide.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const FOREST: u64 = 3;
    pub const CLASSIFIER: u64 = 4;
    pub const REGRESSOR: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const EFFECT: u64 = 7;
    pub const MTRY: u64 = 8;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream_and_root() {
        let a = derive_seed(7, 0);
        assert_ne!(a, derive_seed(7, 1));
        assert_ne!(a, derive_seed(8, 0));
        assert_eq!(a, derive_seed(7, 0));
    }
}
