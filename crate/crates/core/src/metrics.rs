//! Per-UE error and rate metrics, pilot-overhead accounting, and the
//! per-iteration trace recorded by every runner.
//!
//! With unit-power group streams, the post-combining error of UE `k`
//! (serving group `γ = g_k`) is
//!
//! ```text
//! MSE_k = Σ_g |v_k^H H_k^H w_g|² − 2 Re[v_k^H H_k^H w_γ] + σ² ‖v_k‖² + 1
//! SINR_k = |v_k^H H_k^H w_γ|² / (Σ_{g≠γ} |v_k^H H_k^H w_g|² + σ² ‖v_k‖²)
//! ```
//!
//! both scale-invariant facts about the same link gains
//! `c_{k,g} = v_k^H H_k^H w_g`; the MMSE combiner ties them together via
//! `MSE = 1/(1 + SINR)`.

use serde::{Deserialize, Serialize};

use crate::airlink::PilotBook;
use crate::scenario::{ChannelSet, Grouping};
use crate::types::{Algorithm, C64, CMat, CVec, CombinerSet, PrecoderSet};

/// Link gains `c_{k,g} = v^H H^H w_g` for one UE against every group
/// precoder (aggregated vectors).
pub fn link_gains(h_agg: &CMat, w_agg: &[CVec], v: &CVec) -> Vec<C64> {
    let hv = h_agg * v; // BM×1
    w_agg
        .iter()
        .map(|w| {
            // v^H H^H w = (Hv)^H w
            (hv.adjoint() * w)[(0, 0)]
        })
        .collect()
}

fn mse_from_gains(c: &[C64], own: usize, v_norm_sq: f64, sigma2_ue: f64) -> f64 {
    let total: f64 = c.iter().map(|x| x.norm_sqr()).sum();
    total - 2.0 * c[own].re + sigma2_ue * v_norm_sq + 1.0
}

fn sinr_from_gains(c: &[C64], own: usize, v_norm_sq: f64, sigma2_ue: f64) -> f64 {
    let signal = c[own].norm_sqr();
    if signal == 0.0 {
        return 0.0;
    }
    let interference: f64 = c
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != own)
        .map(|(_, x)| x.norm_sqr())
        .sum();
    signal / (interference + sigma2_ue * v_norm_sq)
}

/// Post-combining MSE of UE `k` whose serving group is `own`.
pub fn mse_ue(h_agg: &CMat, w_agg: &[CVec], v: &CVec, own: usize, sigma2_ue: f64) -> f64 {
    mse_from_gains(&link_gains(h_agg, w_agg, v), own, v.norm_squared(), sigma2_ue)
}

/// Post-combining SINR of UE `k`; zero combiner gives zero SINR.
pub fn sinr_ue(h_agg: &CMat, w_agg: &[CVec], v: &CVec, own: usize, sigma2_ue: f64) -> f64 {
    sinr_from_gains(&link_gains(h_agg, w_agg, v), own, v.norm_squared(), sigma2_ue)
}

/// Multicast group rates `R_g = log2(1 + min_{k∈K_g} SINR_k)` and their sum.
pub fn group_rates(sinr: &[f64], grouping: &Grouping) -> (Vec<f64>, f64) {
    let rates: Vec<f64> = grouping
        .members
        .iter()
        .map(|members| {
            let worst = members
                .iter()
                .map(|&k| sinr[k])
                .fold(f64::INFINITY, f64::min);
            (1.0 + worst).log2()
        })
        .collect();
    let sum = rates.iter().sum();
    (rates, sum)
}

/// Training symbols an algorithm spends, split into a one-time part and a
/// per-iteration part.
///
/// At minimum pilot lengths the per-iteration costs are
/// `K+G` (LocalMMSE), `2G` (LocalMF), `K+2G` (BR), `3G` (BR-GS and GB),
/// and the centralized designs pay `KN+G` once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotCost {
    pub upfront: f64,
    pub per_iteration: f64,
}

impl PilotCost {
    pub fn consumed(&self, iterations: usize) -> f64 {
        self.upfront + self.per_iteration * iterations as f64
    }
}

/// Pilot cost of `algo` under `book` (actual lengths, which reduce to the
/// canonical counts when the book uses minimum lengths).
pub fn pilot_cost(algo: Algorithm, book: &PilotBook) -> PilotCost {
    let (ul_full, ul_ue, ul_group, dl) = (
        book.tau_ul_full() as f64,
        book.tau_ul_ue() as f64,
        book.tau_ul_group() as f64,
        book.tau_dl() as f64,
    );
    match algo {
        Algorithm::Centralized | Algorithm::CentralizedSumGroup => PilotCost {
            upfront: ul_full + dl,
            per_iteration: 0.0,
        },
        Algorithm::LocalMmse => PilotCost { upfront: 0.0, per_iteration: ul_ue + dl },
        Algorithm::LocalMf => PilotCost { upfront: 0.0, per_iteration: ul_group + dl },
        // The echo block spans the downlink pilot length again.
        Algorithm::Br => PilotCost { upfront: 0.0, per_iteration: ul_ue + 2.0 * dl },
        Algorithm::BrGs | Algorithm::Gb => PilotCost {
            upfront: 0.0,
            per_iteration: ul_group + 2.0 * dl,
        },
    }
}

/// Effective rate after `iterations` rounds of training at `r_ce` symbols
/// per round, out of a coherence budget of `r_t` symbols per block.
pub fn effective_rate(rate: f64, r_ce: f64, r_t: f64, iterations: usize) -> f64 {
    effective_rate_consumed(rate, r_ce * iterations as f64, r_t)
}

/// Effective rate with an explicit consumed-symbol count; the training
/// fraction is clamped so the result never goes negative.
pub fn effective_rate_consumed(rate: f64, consumed: f64, r_t: f64) -> f64 {
    (1.0 - consumed / r_t).max(0.0) * rate
}

/// Per-iteration history of one run.
#[derive(Debug, Clone, Default)]
pub struct IterationTrace {
    /// Weighted sum MSE `Σ_k ω_k MSE_k`.
    pub sum_mse: Vec<f64>,
    pub mse: Vec<Vec<f64>>,
    pub sinr: Vec<Vec<f64>>,
    pub group_rate: Vec<Vec<f64>>,
    pub sum_rate: Vec<f64>,
    pub bs_power: Vec<Vec<f64>>,
    /// Cumulative training symbols after each iteration.
    pub pilots_consumed: Vec<f64>,
    /// Precoder snapshots, kept only when requested.
    pub precoders: Option<Vec<PrecoderSet>>,
}

impl IterationTrace {
    pub fn new(record_precoders: bool) -> Self {
        Self {
            precoders: record_precoders.then(Vec::new),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.sum_rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Evaluates all metrics of `(w, v)` against the true channels and
    /// appends one snapshot.
    pub fn push(
        &mut self,
        ch: &ChannelSet,
        grouping: &Grouping,
        weights: &[f64],
        w: &PrecoderSet,
        v: &CombinerSet,
        sigma2_ue: f64,
        pilots_consumed: f64,
    ) {
        let w_agg = w.aggregated_all();
        let kcount = ch.ue_count();
        let mut mse = Vec::with_capacity(kcount);
        let mut sinr = Vec::with_capacity(kcount);
        for k in 0..kcount {
            let h = ch.aggregated(k);
            let c = link_gains(&h, &w_agg, &v.v[k]);
            let own = grouping.of_ue[k];
            let vn = v.v[k].norm_squared();
            mse.push(mse_from_gains(&c, own, vn, sigma2_ue));
            sinr.push(sinr_from_gains(&c, own, vn, sigma2_ue));
        }
        let (rates, sum_rate) = group_rates(&sinr, grouping);
        self.sum_mse
            .push(mse.iter().zip(weights).map(|(m, w)| m * w).sum());
        self.mse.push(mse);
        self.sinr.push(sinr);
        self.group_rate.push(rates);
        self.sum_rate.push(sum_rate);
        self.bs_power.push(w.bs_powers());
        self.pilots_consumed.push(pilots_consumed);
        if let Some(ws) = &mut self.precoders {
            ws.push(w.clone());
        }
    }
}
