//! Counter-based seeding: replication `i` of an experiment with master seed `s` always
//! sees the same stream, whatever the thread schedule.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Generator for one replication: key `master_seed`, stream `rep`.
pub fn replication_rng(master_seed: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    rng
}
