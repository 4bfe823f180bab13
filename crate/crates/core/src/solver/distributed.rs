//! Iterative per-BS precoder updates coupled through over-the-air rounds.
//!
//! Each BS refines its own precoders from local observations while the
//! rest of the network is frozen at the previous iterate. The coupling
//! enters through the cross term
//!
//! ```text
//! ξ_{b,g} = Σ_k ω_k e_{b,k} s_{k,g},   s_{k,g} = Σ_b̄ e_{b̄,k}^H w_{b̄,g}
//! ```
//!
//! which a BS can either compute exactly (perfect CSI) or estimate from
//! an uplink echo of the previous downlink block. Because the echo
//! reflects the precoders of the previous iteration, the cross term each
//! update consumes is always one iteration stale; the very first
//! iteration has no echo at all and treats ξ as zero, consistent with
//! starting from all-zero precoders.
//!
//! Three update families share this structure:
//! * best response (BR): a regularized Newton step per group built from
//!   per-UE effective channels,
//! * group-space best response (BR-GS): the same step built from the
//!   cheaper weighted group channels only,
//! * gradient with ball projection (GB): a plain gradient step, scaled
//!   back onto the power ball when it overshoots.
//!
//! BR and BR-GS meet the per-BS budget by bisecting their multiplier λ on
//! the power of the stepped precoders; GB projects instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::airlink::{
    round_downlink, round_ul_echo, round_ul_group, round_ul_ue, DlRound, PilotBook,
};
use crate::linalg::{add_outer, HermitianSolver, OnSingular};
use crate::metrics::{pilot_cost, IterationTrace};
use crate::scenario::{ChannelSet, Grouping};
use crate::solver::centralized::{ls_combiner, mmse_combiner};
use crate::solver::local::{
    bisect_power_lambda, group_channels, GroupPilotPrecoder, PilotGram, LAMBDA_MIN,
};
use crate::types::{Algorithm, C64, CMat, CVec, CombinerSet, CsiMode, PrecoderSet};
use crate::{Error, Result};

/// Exact cross terms `ξ_{b,g}` of `w_prev` under the current combiners,
/// flat `b*G + g`. The sum over BSs includes `b` itself; the per-BS
/// update subtracts its own stale contribution through the λ`w_prev`
/// term of the step.
pub fn cross_terms_exact(
    ch: &ChannelSet,
    combiners: &CombinerSet,
    weights: &[f64],
    w_prev: &PrecoderSet,
) -> Vec<CVec> {
    let (bcount, kcount) = (ch.bs_count(), ch.ue_count());
    let gcount = w_prev.group_count();
    let eff = ch.effective(combiners);
    // s_{k,g} = Σ_b e_{b,k}^H w_{b,g}
    let mut s = vec![C64::new(0.0, 0.0); kcount * gcount];
    for b in 0..bcount {
        for k in 0..kcount {
            let e = &eff[b * kcount + k];
            for g in 0..gcount {
                s[k * gcount + g] += e.dotc(w_prev.w(b, g));
            }
        }
    }
    let m = ch.bs_antennas();
    let mut xi = Vec::with_capacity(bcount * gcount);
    for b in 0..bcount {
        for g in 0..gcount {
            let mut acc = CVec::zeros(m);
            for k in 0..kcount {
                acc += &eff[b * kcount + k] * (s[k * gcount + g] * C64::new(weights[k], 0.0));
            }
            xi.push(acc);
        }
    }
    xi
}

/// Best-response step direction for one BS:
/// `Δ_g = −(Σ_k ω_k e_k e_k^H + λI)^{-1} (u_g − ξ_g − λ w_{prev,g})`.
///
/// The update `w = w_prev − αΔ` with `α = 1` lands on the exact best
/// response to the other BSs' previous precoders; `Δ = 0` iff `w_prev`
/// is already that best response.
pub fn br_direction(
    heff_b: &[CVec],
    weights: &[f64],
    grouping: &Grouping,
    lambda: f64,
    w_prev_b: &[CVec],
    xi_b: &[CVec],
) -> Result<Vec<CVec>> {
    let m = heff_b[0].len();
    let mut c = CMat::zeros(m, m);
    for (e, &w) in heff_b.iter().zip(weights) {
        if w != 0.0 {
            add_outer(&mut c, e, w);
        }
    }
    for i in 0..m {
        c[(i, i)] += C64::new(lambda, 0.0);
    }
    let solver = HermitianSolver::new(c, OnSingular::Load)?;
    let u = group_channels(heff_b, weights, grouping);
    Ok((0..u.len())
        .map(|g| {
            let rhs = &u[g] - &xi_b[g] - &w_prev_b[g] * C64::new(lambda, 0.0);
            -solver.solve_vec(&rhs)
        })
        .collect())
}

/// Group-space best-response direction, with the Gram built from the
/// weighted group channels `f_g` instead of per-UE channels:
/// `Δ_g = −(Σ_g f_g f_g^H + λI)^{-1} (f_g − ξ_g − λ w_{prev,g})`.
///
/// For singleton groups at unit weight this coincides with [`br_direction`].
pub fn br_gs_direction(
    group_ch_b: &[CVec],
    lambda: f64,
    w_prev_b: &[CVec],
    xi_b: &[CVec],
) -> Result<Vec<CVec>> {
    let m = group_ch_b[0].len();
    let mut d = CMat::zeros(m, m);
    for f in group_ch_b {
        add_outer(&mut d, f, 1.0);
    }
    for i in 0..m {
        d[(i, i)] += C64::new(lambda, 0.0);
    }
    let solver = HermitianSolver::new(d, OnSingular::Load)?;
    Ok((0..group_ch_b.len())
        .map(|g| {
            let rhs = &group_ch_b[g] - &xi_b[g] - &w_prev_b[g] * C64::new(lambda, 0.0);
            -solver.solve_vec(&rhs)
        })
        .collect())
}

/// `w = w_prev − α Δ` per group.
pub fn apply_step(w_prev_b: &[CVec], delta_b: &[CVec], alpha: f64) -> Vec<CVec> {
    w_prev_b
        .iter()
        .zip(delta_b)
        .map(|(w, d)| w - d * C64::new(alpha, 0.0))
        .collect()
}

/// Gradient of the weighted sum MSE with respect to `w_{b,g}` in real
/// coordinates: `∇_g = 2(ξ_g − u_g)`. Feed exact quantities or the pilot
/// estimates `(f̂, ξ̂)`; the expression is the same.
pub fn gb_gradient(group_ch_b: &[CVec], xi_b: &[CVec]) -> Vec<CVec> {
    group_ch_b
        .iter()
        .zip(xi_b)
        .map(|(u, xi)| (xi - u) * C64::new(2.0, 0.0))
        .collect()
}

/// Projects one BS's precoders onto the power ball `Σ_g ‖w_g‖² ≤ ρ` by
/// uniform scaling (the Euclidean projection).
pub fn gb_project(mut w_b: Vec<CVec>, rho: f64) -> Vec<CVec> {
    let p: f64 = w_b.iter().map(|x| x.norm_squared()).sum();
    if p > rho {
        let a = C64::new((rho / p).sqrt(), 0.0);
        for w in &mut w_b {
            *w *= a;
        }
    }
    w_b
}

fn pilot_direction(
    gram: &PilotGram,
    xi_b: &[CVec],
    lambda: f64,
    w_prev_b: &[CVec],
) -> Result<Vec<CVec>> {
    let solver = HermitianSolver::new(gram.regularized(lambda), OnSingular::Load)?;
    let scale = C64::new(gram.tau * gram.beta, 0.0);
    Ok((0..gram.r.len())
        .map(|g| {
            let rhs = &gram.r[g] - (&xi_b[g] + &w_prev_b[g] * C64::new(lambda, 0.0)) * scale;
            -solver.solve_vec(&rhs)
        })
        .collect())
}

/// Pilot-domain best-response operator for one BS, built from one
/// UE-effective block plus the cross-term estimates of the echo:
/// `Δ_g(λ) = −(S + (τβλ − σ²Σω)I)^{-1} (r_g − τβ(ξ̂_g + λ w_{prev,g}))`.
///
/// At zero noise this reproduces [`br_direction`] exactly.
pub struct BrPilotOp {
    gram: PilotGram,
    xi: Vec<CVec>,
}

impl BrPilotOp {
    pub fn new(
        y: &CMat,
        pilots: &[CVec],
        weights: &[f64],
        grouping: &Grouping,
        beta: f64,
        xi_b: Vec<CVec>,
        sigma2_bs: f64,
    ) -> Result<Self> {
        let gram = PilotGram::from_ue_round(y, pilots, weights, grouping, beta, sigma2_bs)?;
        if xi_b.len() != gram.r.len() {
            return Err(Error::InvalidConfig("one cross term per group".into()));
        }
        Ok(Self { gram, xi: xi_b })
    }

    pub fn lambda_min(&self) -> f64 {
        self.gram.lambda_min()
    }

    pub fn direction(&self, lambda: f64, w_prev_b: &[CVec]) -> Result<Vec<CVec>> {
        pilot_direction(&self.gram, &self.xi, lambda, w_prev_b)
    }
}

/// Pilot-domain group-space best-response operator; same step as
/// [`BrPilotOp`] with the Gram and right-hand sides taken from one
/// group-effective block. Reproduces [`br_gs_direction`] at zero noise.
pub struct BrGsPilotOp {
    gram: PilotGram,
    xi: Vec<CVec>,
}

impl BrGsPilotOp {
    pub fn new(
        y: &CMat,
        group_pilots: &[CVec],
        beta: f64,
        xi_b: Vec<CVec>,
        sigma2_bs: f64,
    ) -> Result<Self> {
        let gram = PilotGram::from_group_round(y, group_pilots, beta, sigma2_bs);
        if xi_b.len() != gram.r.len() {
            return Err(Error::InvalidConfig("one cross term per group".into()));
        }
        Ok(Self { gram, xi: xi_b })
    }

    pub fn lambda_min(&self) -> f64 {
        self.gram.lambda_min()
    }

    pub fn direction(&self, lambda: f64, w_prev_b: &[CVec]) -> Result<Vec<CVec>> {
        pilot_direction(&self.gram, &self.xi, lambda, w_prev_b)
    }
}

/// Step-size rule for the gradient update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GbStep {
    /// Use `alpha` as-is for every iteration.
    Fixed { alpha: f64 },
    /// Resolve α once, at the first gradient, so that the largest per-BS
    /// first step has length `fraction · √ρ`; hold it afterwards. This
    /// keeps the step meaningful across path-loss scales.
    Auto { fraction: f64 },
}

impl Default for GbStep {
    fn default() -> Self {
        GbStep::Auto { fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepConfig {
    /// Damping of the best-response step; 1 is the undamped best response.
    pub alpha_br: f64,
    pub gb: GbStep,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { alpha_br: 0.5, gb: GbStep::default() }
    }
}

#[derive(Debug, Clone)]
pub struct BidirConfig {
    pub iterations: usize,
    pub weights: Vec<f64>,
    pub rho_bs_w: f64,
    pub rho_ue_w: f64,
    pub sigma2_bs_w: f64,
    pub sigma2_ue_w: f64,
    pub step: StepConfig,
    pub record_precoders: bool,
}

impl BidirConfig {
    pub fn new(
        ue_count: usize,
        rho_bs_w: f64,
        rho_ue_w: f64,
        sigma2_bs_w: f64,
        sigma2_ue_w: f64,
    ) -> Self {
        Self {
            iterations: 30,
            weights: vec![1.0; ue_count],
            rho_bs_w,
            rho_ue_w,
            sigma2_bs_w,
            sigma2_ue_w,
            step: StepConfig::default(),
            record_precoders: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BidirRun {
    pub precoders: PrecoderSet,
    pub combiners: CombinerSet,
    pub trace: IterationTrace,
    pub warnings: Vec<String>,
}

fn needs_echo(algo: Algorithm) -> bool {
    matches!(algo, Algorithm::Br | Algorithm::BrGs | Algorithm::Gb)
}

fn uses_ue_round(algo: Algorithm) -> bool {
    matches!(algo, Algorithm::LocalMmse | Algorithm::Br)
}

fn abort(it: usize, err: Error) -> Error {
    Error::RunAborted { iteration: it, reason: err.to_string() }
}

/// Runs one of the per-BS designs for `cfg.iterations` rounds of the
/// bidirectional protocol: optional uplink echo, uplink training, per-BS
/// precoder update, downlink training, combiner update, metrics snapshot.
/// Perfect CSI replaces every estimate with its exact counterpart while
/// keeping the same schedule and pilot accounting.
pub fn run_bidirectional(
    algo: Algorithm,
    ch: &ChannelSet,
    grouping: &Grouping,
    book: &PilotBook,
    cfg: &BidirConfig,
    csi: CsiMode,
    init: &CombinerSet,
    rng: &mut impl Rng,
) -> Result<BidirRun> {
    if algo.is_centralized() {
        return Err(Error::InvalidConfig(format!(
            "{algo} is not a per-BS design; use run_centralized"
        )));
    }
    let (bcount, kcount, gcount) = (ch.bs_count(), ch.ue_count(), grouping.group_count());
    let m = ch.bs_antennas();
    if cfg.weights.len() != kcount {
        return Err(Error::InvalidConfig("one weight per UE".into()));
    }
    if init.ue_count() != kcount {
        return Err(Error::InvalidConfig("one initial combiner per UE".into()));
    }
    let rho = cfg.rho_bs_w;
    let cost = pilot_cost(algo, book);
    let ue_pilots: Vec<CVec> = (0..kcount).map(|k| book.ul_ue_pilot(k)).collect();
    let group_pilots: Vec<CVec> = (0..gcount).map(|g| book.ul_group_pilot(g)).collect();
    let agg_h: Vec<CMat> = (0..kcount).map(|k| ch.aggregated(k)).collect();

    let mut v = init.clone();
    let mut w = PrecoderSet::zeros(bcount, gcount, m);
    let mut trace = IterationTrace::new(cfg.record_precoders);
    let mut warnings = Vec::new();
    let mut prev_dl: Option<DlRound> = None;
    let mut gb_alpha: Option<f64> = None;
    let zero_xi: Vec<CVec> = vec![CVec::zeros(m); gcount];

    for it in 1..=cfg.iterations {
        // Cross terms of the previous precoders under the current combiners.
        let xi: Option<Vec<CVec>> = match csi {
            CsiMode::Perfect => {
                needs_echo(algo).then(|| cross_terms_exact(ch, &v, &cfg.weights, &w))
            }
            CsiMode::Estimated => match (&prev_dl, needs_echo(algo)) {
                (Some(dl), true) => Some(
                    round_ul_echo(
                        ch,
                        &v,
                        &cfg.weights,
                        &dl.blocks,
                        book,
                        cfg.rho_ue_w,
                        cfg.sigma2_bs_w,
                        rng,
                    )
                    .map_err(|e| abort(it, e))?
                    .xi_hat,
                ),
                _ => None,
            },
        };
        let xi_of = |b: usize| -> &[CVec] {
            xi.as_deref().map_or(&zero_xi[..], |x| &x[b * gcount..(b + 1) * gcount])
        };

        match csi {
            CsiMode::Perfect => {
                let eff = ch.effective(&v);
                let eff_of = |b: usize| &eff[b * kcount..(b + 1) * kcount];
                match algo {
                    Algorithm::LocalMmse => {
                        for b in 0..bcount {
                            let (_, row) = bisect_power_lambda(
                                |l| {
                                    crate::solver::local::local_mmse(
                                        eff_of(b),
                                        &cfg.weights,
                                        grouping,
                                        l,
                                    )
                                },
                                rho,
                                LAMBDA_MIN,
                            )
                            .map_err(|e| abort(it, e))?;
                            w.set_bs_row(b, row);
                        }
                    }
                    Algorithm::LocalMf => {
                        for b in 0..bcount {
                            let u = group_channels(eff_of(b), &cfg.weights, grouping);
                            w.set_bs_row(b, mf_row(&u, rho));
                        }
                    }
                    Algorithm::Br => {
                        for b in 0..bcount {
                            let (_, row) = bisect_power_lambda(
                                |l| {
                                    let d = br_direction(
                                        eff_of(b),
                                        &cfg.weights,
                                        grouping,
                                        l,
                                        w.bs_row(b),
                                        xi_of(b),
                                    )?;
                                    Ok(apply_step(w.bs_row(b), &d, cfg.step.alpha_br))
                                },
                                rho,
                                LAMBDA_MIN,
                            )
                            .map_err(|e| abort(it, e))?;
                            w.set_bs_row(b, row);
                        }
                    }
                    Algorithm::BrGs => {
                        for b in 0..bcount {
                            let f = group_channels(eff_of(b), &cfg.weights, grouping);
                            let (_, row) = bisect_power_lambda(
                                |l| {
                                    let d = br_gs_direction(&f, l, w.bs_row(b), xi_of(b))?;
                                    Ok(apply_step(w.bs_row(b), &d, cfg.step.alpha_br))
                                },
                                rho,
                                LAMBDA_MIN,
                            )
                            .map_err(|e| abort(it, e))?;
                            w.set_bs_row(b, row);
                        }
                    }
                    Algorithm::Gb => {
                        let grads: Vec<Vec<CVec>> = (0..bcount)
                            .map(|b| {
                                let u = group_channels(eff_of(b), &cfg.weights, grouping);
                                gb_gradient(&u, xi_of(b))
                            })
                            .collect();
                        let alpha =
                            resolve_gb_alpha(&mut gb_alpha, &cfg.step.gb, &grads, rho, &mut warnings);
                        for (b, grad) in grads.iter().enumerate() {
                            let stepped = apply_step(w.bs_row(b), grad, alpha);
                            w.set_bs_row(b, gb_project(stepped, rho));
                        }
                    }
                    Algorithm::Centralized | Algorithm::CentralizedSumGroup => unreachable!(),
                }
            }
            CsiMode::Estimated => {
                if uses_ue_round(algo) {
                    let round =
                        round_ul_ue(ch, &v, book, cfg.rho_ue_w, cfg.sigma2_bs_w, rng)
                            .map_err(|e| abort(it, e))?;
                    for b in 0..bcount {
                        let y = &round.blocks[b].y;
                        let row = match algo {
                            Algorithm::LocalMmse => {
                                let op = crate::solver::local::UePilotPrecoder::new(
                                    y,
                                    &ue_pilots,
                                    &cfg.weights,
                                    grouping,
                                    round.beta,
                                    cfg.sigma2_bs_w,
                                )
                                .map_err(|e| abort(it, e))?;
                                bisect_power_lambda(|l| op.precoders(l), rho, op.lambda_min())
                                    .map_err(|e| abort(it, e))?
                                    .1
                            }
                            Algorithm::Br => {
                                let op = BrPilotOp::new(
                                    y,
                                    &ue_pilots,
                                    &cfg.weights,
                                    grouping,
                                    round.beta,
                                    xi_of(b).to_vec(),
                                    cfg.sigma2_bs_w,
                                )
                                .map_err(|e| abort(it, e))?;
                                bisect_power_lambda(
                                    |l| {
                                        let d = op.direction(l, w.bs_row(b))?;
                                        Ok(apply_step(w.bs_row(b), &d, cfg.step.alpha_br))
                                    },
                                    rho,
                                    op.lambda_min(),
                                )
                                .map_err(|e| abort(it, e))?
                                .1
                            }
                            _ => unreachable!(),
                        };
                        w.set_bs_row(b, row);
                    }
                } else {
                    let round = round_ul_group(
                        ch,
                        &v,
                        &cfg.weights,
                        grouping,
                        book,
                        cfg.rho_ue_w,
                        cfg.sigma2_bs_w,
                        rng,
                    )
                    .map_err(|e| abort(it, e))?;
                    match algo {
                        Algorithm::LocalMf => {
                            for b in 0..bcount {
                                let op = GroupPilotPrecoder::new(
                                    &round.blocks[b].y,
                                    &group_pilots,
                                    round.beta,
                                );
                                w.set_bs_row(b, mf_row(op.f_hat(), rho));
                            }
                        }
                        Algorithm::BrGs => {
                            for b in 0..bcount {
                                let op = BrGsPilotOp::new(
                                    &round.blocks[b].y,
                                    &group_pilots,
                                    round.beta,
                                    xi_of(b).to_vec(),
                                    cfg.sigma2_bs_w,
                                )
                                .map_err(|e| abort(it, e))?;
                                let (_, row) = bisect_power_lambda(
                                    |l| {
                                        let d = op.direction(l, w.bs_row(b))?;
                                        Ok(apply_step(w.bs_row(b), &d, cfg.step.alpha_br))
                                    },
                                    rho,
                                    op.lambda_min(),
                                )
                                .map_err(|e| abort(it, e))?;
                                w.set_bs_row(b, row);
                            }
                        }
                        Algorithm::Gb => {
                            let grads: Vec<Vec<CVec>> = (0..bcount)
                                .map(|b| {
                                    gb_gradient(
                                        &round.f_hat[b * gcount..(b + 1) * gcount],
                                        xi_of(b),
                                    )
                                })
                                .collect();
                            let alpha = resolve_gb_alpha(
                                &mut gb_alpha,
                                &cfg.step.gb,
                                &grads,
                                rho,
                                &mut warnings,
                            );
                            for (b, grad) in grads.iter().enumerate() {
                                let stepped = apply_step(w.bs_row(b), grad, alpha);
                                w.set_bs_row(b, gb_project(stepped, rho));
                            }
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }

        if !w.is_finite() {
            return Err(Error::RunAborted {
                iteration: it,
                reason: "precoders left the finite range".into(),
            });
        }
        // The update rules already respect the budget; this is a guard
        // against accumulated round-off only.
        for b in 0..bcount {
            let p = w.bs_power(b);
            if p > rho * (1.0 + 1e-9) {
                let row = gb_project(w.bs_row(b).to_vec(), rho);
                w.set_bs_row(b, row);
                warnings.push(format!("iteration {it}: BS {b} power {p} clipped to budget"));
            }
        }

        match csi {
            CsiMode::Perfect => {
                let w_agg = w.aggregated_all();
                for k in 0..kcount {
                    v.v[k] =
                        mmse_combiner(&agg_h[k], &w_agg, grouping.of_ue[k], cfg.sigma2_ue_w)
                            .map_err(|e| abort(it, e))?;
                }
            }
            CsiMode::Estimated => {
                let dl = round_downlink(ch, &w, book, cfg.sigma2_ue_w, rng)
                    .map_err(|e| abort(it, e))?;
                for k in 0..kcount {
                    let pilot = book.dl_pilot(grouping.of_ue[k]);
                    v.v[k] =
                        ls_combiner(&dl.blocks[k].y, &pilot).map_err(|e| abort(it, e))?;
                }
                prev_dl = Some(dl);
            }
        }

        trace.push(ch, grouping, &cfg.weights, &w, &v, cfg.sigma2_ue_w, cost.consumed(it));
    }

    Ok(BidirRun { precoders: w, combiners: v, trace, warnings })
}

/// Matched-filter row at exactly the budget; all-zero channels give an
/// all-zero row.
fn mf_row(group_ch: &[CVec], rho: f64) -> Vec<CVec> {
    let star = crate::solver::local::mf_lambda_star(group_ch, rho);
    if star > 0.0 {
        group_ch.iter().map(|u| u / C64::new(star, 0.0)).collect()
    } else {
        group_ch.to_vec()
    }
}

fn resolve_gb_alpha(
    cached: &mut Option<f64>,
    rule: &GbStep,
    grads: &[Vec<CVec>],
    rho: f64,
    warnings: &mut Vec<String>,
) -> f64 {
    if let Some(a) = *cached {
        return a;
    }
    let alpha = match *rule {
        GbStep::Fixed { alpha } => alpha,
        GbStep::Auto { fraction } => {
            let worst = grads
                .iter()
                .map(|g| g.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt())
                .fold(0.0f64, f64::max);
            if worst > 0.0 {
                fraction * rho.sqrt() / worst
            } else {
                warnings.push("zero first gradient; gradient step disabled".into());
                0.0
            }
        }
    };
    *cached = Some(alpha);
    alpha
}
