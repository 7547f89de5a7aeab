//! Seeding contract for reproducible, order-independent parallel runs.
//!
//! Every chain owns a ChaCha8 stream: the key comes from the 64-bit master
//! seed and the chain index selects the stream, so chain `i` sees the same
//! numbers no matter how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

/// Random source for chain `chain` under master seed `master`.
pub fn chain_rng(master: u64, chain: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(chain);
    rng
}
