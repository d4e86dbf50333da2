//! Reproducible per-path random streams.
//!
//! Every simulated path owns a ChaCha stream keyed by `(seed, path index)`, so a
//! run produces the same numbers regardless of how paths are spread over
//! worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

/// Dedicated stream for path `index` under global `seed`.
pub fn path_stream(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Exponential variate by inverse CDF. `rate` must be positive.
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // U in [0, 1) so 1 - U is in (0, 1] and the log is finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}
