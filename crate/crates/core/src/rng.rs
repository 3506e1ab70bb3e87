//! Deterministic random streams keyed by `(seed, domain, index)`, so parallel
//! work units draw the same numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_FOLDS: u64 = 1;
pub const DOMAIN_TUNING: u64 = 2;
pub const DOMAIN_BOOTSTRAP: u64 = 3;
pub const DOMAIN_REPLICATION: u64 = 4;
pub const DOMAIN_COMPARATOR: u64 = 5;
pub const DOMAIN_TRUTH: u64 = 6;

pub fn unit_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Seed for a nested unit (e.g. the folds inside one bootstrap resample).
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    use rand::RngCore;
    unit_rng(seed, domain, index).next_u64()
}
