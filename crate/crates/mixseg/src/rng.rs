//! Seeded substreams.
//!
//! All randomness in the crate flows from a single user seed through named
//! substreams, so that parallel generation and parallel restarts produce the
//! same bytes regardless of thread count or scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Substream domains. Each (domain, index) pair maps to a distinct stream.
pub(crate) mod domain {
    pub const SIMULATE: u64 = 1;
    pub const INIT: u64 = 2;
    pub const BENCH: u64 = 3;
}

/// Deterministic generator for substream `index` of `domain` under `seed`.
pub(crate) fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 56, "substream index too large");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 56) | index);
    rng
}
