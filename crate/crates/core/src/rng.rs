//! Deterministic stream derivation from a single master seed.
//!
//! Each independent source of randomness gets its own ChaCha stream,
//! keyed by `(drop, purpose)`. Streams never overlap, so parallel drops
//! and per-algorithm noise draws stay reproducible regardless of
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::types::{C64, CMat, CVec};

/// Stream purposes within one Monte-Carlo drop.
pub mod purpose {
    /// BS/UE placement and group assignment.
    pub const TOPOLOGY: u64 = 0;
    /// Small-scale channel realizations.
    pub const CHANNELS: u64 = 1;
    /// Initial receive combiners (shared by all algorithms in a drop).
    pub const INIT_COMBINERS: u64 = 2;
    /// Pilot-noise streams, one per algorithm: `NOISE_BASE + algorithm id`.
    pub const NOISE_BASE: u64 = 8;
}

/// Number of stream slots reserved per drop.
pub const PURPOSE_STRIDE: u64 = 32;

/// RNG for stream `(drop, purpose)` under `master_seed`.
///
/// `purpose` must stay below the per-drop stride; drops may range over
/// the full `u64 / 32` space.
pub fn stream_rng(master_seed: u64, drop: u64, purpose: u64) -> ChaCha8Rng {
    assert!(purpose < PURPOSE_STRIDE, "purpose id out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(drop.wrapping_mul(PURPOSE_STRIDE) + purpose);
    rng
}

/// One draw from the circularly-symmetric complex Gaussian CN(0, variance).
pub fn complex_gaussian(rng: &mut impl rand::Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Matrix with i.i.d. CN(0, variance) entries, filled column-major.
pub fn cn_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize, variance: f64) -> CMat {
    let data: Vec<C64> = (0..rows * cols)
        .map(|_| complex_gaussian(rng, variance))
        .collect();
    CMat::from_vec(rows, cols, data)
}

/// Vector with i.i.d. CN(0, variance) entries.
pub fn cn_vector(rng: &mut impl rand::Rng, len: usize, variance: f64) -> CVec {
    let data: Vec<C64> = (0..len).map(|_| complex_gaussian(rng, variance)).collect();
    CVec::from_vec(data)
}
