//! Seed management.
//!
//! All randomness descends from a master seed. Child seeds are drawn from a
//! ChaCha8 stream keyed by the master seed with the stream id set to the
//! child index, so child `i` never depends on how many other children exist
//! or on the order in which they were requested.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Seed of child `index` of `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Generator for one work item.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `f(child_seed(master, i))` for `i < n`, evaluated in parallel and returned
/// in index order.
pub fn par_samples<T: Send>(master: u64, n: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..n as u64).into_par_iter().map(|i| f(child_seed(master, i))).collect()
}
