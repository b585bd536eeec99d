use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible random stream for `(seed, stream)`.
///
/// ChaCha output is portable across platforms and releases, which keeps run
/// logs bit-identical.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids reserved for instance generation, well away from the per-iteration
/// streams used by samplers.
pub(crate) mod streams {
    pub const INSTANCE: u64 = u64::MAX - 1;
    pub const CMA: u64 = u64::MAX - 2;
    pub const MASK: u64 = u64::MAX - 3;
}
