//! Counter-based random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream selected by
//! `(seed, domain, index)`, so results never depend on evaluation order or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Counts = 1,
    PhaseWalk = 2,
    Calibration = 3,
    MonteCarlo = 4,
}

const INDEX_BITS: u32 = 56;

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}

/// Stream key for one (site, plate) detection record.
pub fn record_index(site: usize, plate: usize) -> u64 {
    ((site as u64) << 8) | plate as u64
}
