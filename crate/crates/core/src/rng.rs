//! Purpose-split random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream derived from a
//! master seed, a [`Purpose`] and an index (member number, round, replicate).
//! Two runs that differ only in strategy therefore share member
//! initializations and minibatch orders.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    MemberInit,
    MinibatchOrder,
    Augmentation,
    DataGeneration,
    Split,
    InitialDesign,
    BoValidation,
    Replicate,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::MemberInit => 1,
            Purpose::MinibatchOrder => 2,
            Purpose::Augmentation => 3,
            Purpose::DataGeneration => 4,
            Purpose::Split => 5,
            Purpose::InitialDesign => 6,
            Purpose::BoValidation => 7,
            Purpose::Replicate => 8,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed; used when one seeded unit spawns sub-units.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(purpose.tag())).wrapping_add(index))
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}
