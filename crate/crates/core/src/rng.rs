//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, round, purpose, index)`, so turning a feature on or off never
//! shifts the draws seen by another feature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Data = 1,
    Split = 2,
    Init = 3,
    Pool = 4,
    Pairing = 5,
    Layer = 6,
    Policy = 7,
    Score = 8,
    Train = 9,
    Virtual = 10,
    Stn = 11,
    Random = 12,
    Bald = 13,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, round: usize, purpose: Purpose, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose as u64)));
    rng.set_stream(splitmix((round as u64) << 20 ^ index ^ splitmix(purpose as u64 + 77)));
    rng
}
