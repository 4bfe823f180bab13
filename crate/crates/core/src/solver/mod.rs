//! Precoder and combiner designs.
//!
//! Three families, all targeting per-BS power budgets `Σ_g ‖w_{b,g}‖² ≤ ρ`:
//!
//! * [`centralized`] — alternating optimization with full (or estimated)
//!   aggregated channels at a central unit, for the weighted sum-MSE and
//!   the per-group worst-case (sum-group) objectives.
//! * [`local`] — one-shot per-BS designs from local effective channels:
//!   regularized MMSE and matched filtering.
//! * [`distributed`] — iterative bidirectional-training designs: best
//!   response on UE channels (BR), best response on group channels
//!   (BR-GS), and projected gradient (GB), each with exact and
//!   pilot-reconstructed variants.

pub mod centralized;
pub mod distributed;
pub mod local;

use rand::Rng;

use crate::rng::cn_vector;
use crate::types::{C64, CombinerSet};

/// Random unit-norm initial combiners, one per UE.
pub fn init_combiners(ue_count: usize, ue_antennas: usize, rng: &mut impl Rng) -> CombinerSet {
    let v = (0..ue_count)
        .map(|_| {
            let x = cn_vector(rng, ue_antennas, 1.0);
            let n = x.norm();
            // A zero draw has probability zero; fall back to e1 anyway.
            if n > 0.0 {
                x / C64::new(n, 0.0)
            } else {
                let mut e = crate::types::CVec::zeros(ue_antennas);
                e[0] = C64::new(1.0, 0.0);
                e
            }
        })
        .collect();
    CombinerSet { v }
}
