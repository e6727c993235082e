//! Named, index-addressable random streams derived from one base seed.
//!
//! Every consumer (data generation, splitting, initialization, shuffling,
//! augmentation) asks for `stream(seed, name, indices)`. Streams are stateless
//! functions of their coordinates, so a checkpoint only needs the epoch and
//! step counters to resume bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DATA: &str = "data";
pub const SPLIT: &str = "split";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const AUGMENT: &str = "augment";
pub const REBALANCE: &str = "rebalance";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// FNV-1a; only needs to be stable across platforms.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(seed: u64, name: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ name_hash(name));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, name: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, name, indices))
}
