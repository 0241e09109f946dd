use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG streams derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Split,
    Perturb,
    Data,
}

impl Stream {
    fn salt(self) -> u64 {
        match self {
            Stream::Init => 0x9e37_79b9_7f4a_7c15,
            Stream::Shuffle => 0xbf58_476d_1ce4_e5b9,
            Stream::Split => 0x94d0_49bb_1331_11eb,
            Stream::Perturb => 0x2545_f491_4f6c_dd1d,
            Stream::Data => 0x6a09_e667_f3bc_c909,
        }
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.salt())
}
