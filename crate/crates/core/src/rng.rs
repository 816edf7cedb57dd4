//! Seeded random streams.
//!
//! Work is cut into fixed-size chunks and chunk `k` draws from ChaCha stream
//! `k` of the run's seed, so results do not depend on how many threads
//! process the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Items drawn per substream.
pub const CHUNK: usize = 4096;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent seed for a labelled sub-task of a run.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
