//! Seeded random streams. Each consumer gets its own ChaCha stream derived
//! from one run seed, so enabling a branch never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Sampler = 2,
    Augment = 3,
    Finetune = 4,
    Retrieval = 5,
    Mining = 6,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(which as u64);
    r
}
