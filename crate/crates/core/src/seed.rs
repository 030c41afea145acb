//! Index-derived seeding so parallel work units draw reproducible streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a stream tag and an index into a fresh seed.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn rng_for(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

pub(crate) mod tags {
    pub const LOCATIONS: u64 = 0x4c4f_4341;
    pub const OUTCOMES: u64 = 0x4f55_5443;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const RISK: u64 = 0x5249_534b;
}
