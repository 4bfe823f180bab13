//! Centralized alternating optimization of multicast precoders.
//!
//! For fixed combiners the per-UE MSE is convex in the stacked precoders,
//! and the optimum for both objectives has the regularized form
//!
//! ```text
//! w_g = (Σ_k c_k h_k h_k^H + blkdiag(λ_b I_M))^{-1} Σ_{k∈K_g} c_k h_k
//! ```
//!
//! with `h_k = H_k v_k` the aggregated effective channels. For the
//! weighted sum-MSE objective `c_k = ω_k` is fixed; for the sum-group
//! objective `c_k = μ_k` are per-UE multipliers that concentrate on each
//! group's worst members. Multipliers are driven by projected subgradient
//! steps with `1/√t` decay, followed by a multiplicative power-balancing
//! polish on the per-BS multipliers `λ_b` so active budgets land on
//! `Σ_g ‖w_{b,g}‖² = ρ` to high accuracy.
//!
//! Combiner steps are exact per-UE MMSE solves; with estimated CSI the
//! whole loop runs on the estimates and the operational combiners come
//! from a final downlink pilot round.

use rand::Rng;

use crate::airlink::{round_downlink, round_ul_full, PilotBook};
use crate::linalg::{add_outer, HermitianSolver, OnSingular};
use crate::metrics::{pilot_cost, IterationTrace};
use crate::scenario::{ChannelSet, Grouping};
use crate::types::{C64, CMat, CVec, CombinerSet, CsiMode, PrecoderSet};
use crate::{Error, Result};

/// Objective minimized by the precoder step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Weighted sum of per-UE MSEs, `Σ_k ω_k MSE_k`.
    SumMse,
    /// Sum over groups of the worst member MSE, `Σ_g max_{k∈K_g} MSE_k`.
    SumGroupMse,
}

/// Per-UE multipliers `μ` (sum-group fairness weights) and per-BS power
/// multipliers `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl DualState {
    /// Uniform μ within each group (summing to one), zero λ.
    pub fn uniform(grouping: &Grouping, bs_count: usize) -> Self {
        let mut mu = vec![0.0; grouping.ue_count()];
        for members in &grouping.members {
            for &k in members {
                mu[k] = 1.0 / members.len() as f64;
            }
        }
        Self { mu, lambda: vec![0.0; bs_count] }
    }
}

/// MMSE receive combiner from (possibly estimated) aggregated channels:
/// `v = (Σ_g t_g t_g^H + σ² I)^{-1} t_own` with `t_g = H^H w_g`.
///
/// With σ² = 0 and too few precoded directions the system is singular and
/// the call fails rather than guessing a pseudo-inverse.
pub fn mmse_combiner(h_agg: &CMat, w_agg: &[CVec], own: usize, sigma2_ue: f64) -> Result<CVec> {
    let n = h_agg.ncols();
    let mut a = CMat::zeros(n, n);
    let mut t_own = CVec::zeros(n);
    for (g, w) in w_agg.iter().enumerate() {
        let t = h_agg.adjoint() * w;
        add_outer(&mut a, &t, 1.0);
        if g == own {
            t_own = t;
        }
    }
    for i in 0..n {
        a[(i, i)] += C64::new(sigma2_ue, 0.0);
    }
    crate::linalg::solve_hermitian(a, &t_own, OnSingular::Error)
}

/// Least-squares pilot-domain combiner from a downlink block:
/// `v = (Y Y^H)^{-1} Y p`. Rank-deficient Gram matrices (e.g. zero noise
/// with fewer groups than antennas) fall back to diagonal loading.
pub fn ls_combiner(y_dl: &CMat, pilot: &CVec) -> Result<CVec> {
    let gram = y_dl * y_dl.adjoint();
    let rhs = y_dl * pilot;
    crate::linalg::solve_hermitian(gram, &rhs, OnSingular::Load)
}

/// Regularized precoders for coefficients `c` (weights or multipliers):
/// one shared Hermitian factorization, one solve per group.
///
/// Two guards keep the λ→0 solve well behaved. Coefficients below 1e-12
/// of the largest are dropped entirely: a vanishing multiplier adds a
/// near-zero Gram eigenvalue whose "service" costs unbounded power for
/// negligible objective value. And block regularization never falls
/// below 1e-9 of the mean data eigenvalue, which selects the
/// minimum-norm solution on the remaining flat directions.
pub fn weighted_precoders(
    heff: &[CVec],
    coeff: &[f64],
    lambda: &[f64],
    grouping: &Grouping,
) -> Result<Vec<CVec>> {
    PrecoderStep::new(heff, coeff, lambda.len(), grouping)?.solve(lambda)
}

/// The data side of the regularized precoder solve, assembled once so
/// repeated multiplier probes only pay for the factorization.
struct PrecoderStep {
    gram: CMat,
    rhs: CMat,
    floor: f64,
    bs_count: usize,
    m: usize,
}

impl PrecoderStep {
    fn new(
        heff: &[CVec],
        coeff: &[f64],
        bs_count: usize,
        grouping: &Grouping,
    ) -> Result<Self> {
        let bm = heff[0].len();
        if bm % bs_count != 0 {
            return Err(Error::InvalidConfig(
                "aggregated channel length not divisible by BS count".into(),
            ));
        }
        let cut = 1e-12 * coeff.iter().cloned().fold(0.0, f64::max);
        let mut gram = CMat::zeros(bm, bm);
        for (h, &c) in heff.iter().zip(coeff) {
            if c > cut {
                add_outer(&mut gram, h, c);
            }
        }
        let floor = 1e-9 * (0..bm).map(|i| gram[(i, i)].re).sum::<f64>() / bm as f64;
        let mut rhs = CMat::zeros(bm, grouping.group_count());
        for (g, members) in grouping.members.iter().enumerate() {
            let mut col = CVec::zeros(bm);
            for &k in members {
                if coeff[k] > cut {
                    col += &heff[k] * C64::new(coeff[k], 0.0);
                }
            }
            rhs.set_column(g, &col);
        }
        Ok(Self { gram, rhs, floor, bs_count, m: bm / bs_count })
    }

    fn solve(&self, lambda: &[f64]) -> Result<Vec<CVec>> {
        let mut a = self.gram.clone();
        for b in 0..self.bs_count {
            let reg = lambda[b].max(self.floor);
            for i in 0..self.m {
                a[(b * self.m + i, b * self.m + i)] += C64::new(reg, 0.0);
            }
        }
        let solver = HermitianSolver::new(a, OnSingular::Load)?;
        let sol = solver.solve_mat(&self.rhs);
        Ok((0..self.rhs.ncols()).map(|g| sol.column(g).into_owned()).collect())
    }
}

/// One projected subgradient step on the fairness multipliers:
/// `μ_k ← [μ_k + ζ (MSE_k − t_g)]_+`, then per-group renormalization to
/// unit sum (a group that clamps to all zeros restarts uniform). Returns
/// the post-update targets `t_g = Σ_{k∈K_g} μ_k MSE_k`.
pub fn subgrad_update_mu(
    duals: &mut DualState,
    mse: &[f64],
    grouping: &Grouping,
    zeta: f64,
) -> Vec<f64> {
    let mut targets = Vec::with_capacity(grouping.group_count());
    for members in &grouping.members {
        let t: f64 = members.iter().map(|&k| duals.mu[k] * mse[k]).sum();
        let mut sum = 0.0;
        for &k in members {
            duals.mu[k] = (duals.mu[k] + zeta * (mse[k] - t)).max(0.0);
            sum += duals.mu[k];
        }
        if sum <= 0.0 {
            for &k in members {
                duals.mu[k] = 1.0 / members.len() as f64;
            }
        } else {
            for &k in members {
                duals.mu[k] /= sum;
            }
        }
        targets.push(members.iter().map(|&k| duals.mu[k] * mse[k]).sum());
    }
    targets
}

/// One projected subgradient step on the power multipliers:
/// `λ_b ← [λ_b + η (p_b − ρ)]_+`.
pub fn subgrad_update_lambda(duals: &mut DualState, powers: &[f64], rho: f64, eta: f64) {
    for (l, &p) in duals.lambda.iter_mut().zip(powers) {
        *l = (*l + eta * (p - rho)).max(0.0);
    }
}

/// Tuning for the alternating optimization.
#[derive(Debug, Clone)]
pub struct CentralizedConfig {
    pub objective: Objective,
    /// Per-UE weights ω (uniform = all ones).
    pub weights: Vec<f64>,
    pub rho_bs_w: f64,
    pub rho_ue_w: f64,
    pub sigma2_bs_w: f64,
    pub sigma2_ue_w: f64,
    /// Outer alternating iterations: stop at `outer_max` or when the
    /// objective improves by less than `outer_rel_tol` relatively.
    pub outer_max: usize,
    pub outer_rel_tol: f64,
    /// Inner dual loop: at most `inner_max` subgradient steps, stopping
    /// early when the dual residual drops below `inner_tol`.
    pub inner_max: usize,
    pub inner_tol: f64,
    /// Base step sizes, decayed as `1/√t` over the dual steps accumulated
    /// across the whole run.
    pub zeta0: f64,
    pub eta0: f64,
    pub record_precoders: bool,
}

impl CentralizedConfig {
    pub fn new(objective: Objective, ue_count: usize, rho_bs_w: f64, sigma2_ue_w: f64) -> Self {
        Self {
            objective,
            weights: vec![1.0; ue_count],
            rho_bs_w,
            rho_ue_w: 0.1,
            sigma2_bs_w: 0.0,
            sigma2_ue_w,
            outer_max: 200,
            outer_rel_tol: 1e-6,
            inner_max: 500,
            inner_tol: 1e-5,
            zeta0: 0.5,
            eta0: 0.5,
            record_precoders: false,
        }
    }
}

fn mse_from_heff(heff_k: &CVec, w_agg: &[CVec], own: usize, noise_term: f64) -> f64 {
    let mut total = 0.0;
    let mut own_re = 0.0;
    for (g, w) in w_agg.iter().enumerate() {
        let c = (heff_k.adjoint() * w)[(0, 0)];
        total += c.norm_sqr();
        if g == own {
            own_re = c.re;
        }
    }
    total - 2.0 * own_re + noise_term + 1.0
}

fn bs_powers_of(w_agg: &[CVec], bs_count: usize, m: usize) -> Vec<f64> {
    (0..bs_count)
        .map(|b| {
            w_agg
                .iter()
                .map(|w| w.rows(b * m, m).norm_squared())
                .sum()
        })
        .collect()
}

/// Magnitude scale for λ: the matched-filter multiplier that would spend
/// the whole budget, `√(Σ_g ‖Σ_{k∈K_g} c_k h_k‖² / ρ)`.
fn lambda_scale(heff: &[CVec], coeff: &[f64], grouping: &Grouping, rho: f64) -> f64 {
    let bm = heff[0].len();
    let mut sum = 0.0;
    for members in &grouping.members {
        let mut u = CVec::zeros(bm);
        for &k in members {
            u += &heff[k] * C64::new(coeff[k], 0.0);
        }
        sum += u.norm_squared();
    }
    (sum / rho).sqrt().max(f64::MIN_POSITIVE)
}

struct InnerOutcome {
    w_agg: Vec<CVec>,
    objective: f64,
}

/// Exact per-BS power complementarity for fixed combining coefficients:
/// Gauss-Seidel sweeps bisect each λ_b so every active budget sits on the
/// boundary and inactive multipliers vanish. Since `w(λ)` is the
/// stationary point of the Lagrangian, the result is the KKT solution of
/// the convex precoder step.
///
/// Multipliers are rebuilt from zero on every call. Warm starts look
/// attractive but are poison here: when the active set shrinks, a stale
/// multiplier has to decay through the sweep coupling (a fixed factor per
/// sweep), and crossing several decades eats the whole sweep budget.
/// Active-set discovery from zero costs a handful of sweeps instead.
///
/// An active budget can sit where the regularized Gram is numerically
/// rank-deficient; there the power read off the solve carries noise of
/// about 1e-8 relative, so that is the slackness band worth asking for.
/// Feasibility stays strict: the bisection keeps the feasible side and
/// the terminal iterate is rounded onto any budget the last sweep left
/// overshot, a rescale below the solve noise.
fn balance_lambda(
    heff: &[CVec],
    coeff: &[f64],
    grouping: &Grouping,
    rho: f64,
    lambda: &mut [f64],
) -> Result<Vec<CVec>> {
    let bs_count = lambda.len();
    let m = heff[0].len() / bs_count;
    // Searches pin each budget to ±1e-8 of the boundary, but re-pinning
    // one budget disturbs the others through the shared solve by up to a
    // few 1e-7 relative (the read-off noise where the Gram is nearly
    // singular), so that is the band a sweep can actually hold. The
    // terminal clamp restores strict feasibility.
    let slack_tol = 1e-7;
    let accept_tol = 5e-7;
    let feas_tol = 1e-12;
    let scale = lambda_scale(heff, coeff, grouping, rho);
    let step = PrecoderStep::new(heff, coeff, bs_count, grouping)?;
    lambda.fill(0.0);
    let mut w = step.solve(lambda)?;
    let mut prev = lambda.to_vec();
    for sweep in 0..30 {
        let powers = bs_powers_of(&w, bs_count, m);
        let settled = (0..bs_count).all(|b| {
            let rel = (powers[b] - rho) / rho;
            if lambda[b] == 0.0 { rel <= feas_tol } else { rel.abs() <= accept_tol }
        });
        // A budget pinned where the Gram is numerically rank-deficient
        // reads back its power with noise near 1e-7 relative, so six such
        // budgets never sit inside the band simultaneously. The giveaway
        // is that the multipliers stop moving while the power readings
        // jitter: genuine Gauss-Seidel progress moves multipliers by
        // percents per sweep, noise flapping moves them below 1e-6.
        let stagnant = sweep > 0
            && lambda
                .iter()
                .zip(&prev)
                .all(|(l, p)| (l - p).abs() <= 1e-6 * (l + p));
        if std::env::var("DBG_SW").is_ok() && (settled || stagnant || sweep == 29) {
            eprintln!("call sweeps={sweep} settled={settled} stagnant={stagnant}");
        }
        if settled || stagnant {
            break;
        }
        prev.copy_from_slice(lambda);
        for b in 0..bs_count {
            let rel = (bs_powers_of(&w, bs_count, m)[b] - rho) / rho;
            if rel <= feas_tol && (lambda[b] == 0.0 || rel >= -slack_tol) {
                continue;
            }
            let lam_was = lambda[b];
            // Feasible without the multiplier?
            lambda[b] = 0.0;
            w = step.solve(lambda)?;
            if bs_powers_of(&w, bs_count, m)[b] <= rho * (1.0 + feas_tol) {
                continue;
            }
            // p_b decreases in λ_b. Bracket the crossing, then close in on
            // it. A multiplier from the previous sweep is a tight head to
            // bracket around; from cold the crossing can sit many decades
            // below the scale guess, so walk the bracket down by decades,
            // then split geometrically until it spans a factor of two, and
            // finish with secant steps. Every stage keeps the feasible
            // side, and each solve is a full refresh of `w`, so whatever
            // λ_b was probed last must be the accepted endpoint.
            let probe = |lambda: &mut [f64], w: &mut Vec<CVec>, x: f64| -> Result<f64> {
                lambda[b] = x;
                *w = step.solve(lambda)?;
                Ok(bs_powers_of(w, bs_count, m)[b] - rho)
            };
            let warm = lam_was > 0.0;
            let mut hi = if warm { lam_was } else { scale.max(f64::MIN_POSITIVE) };
            let mut f_hi = probe(lambda, &mut w, hi)?;
            let mut lo = 0.0f64;
            let mut f_lo = f64::INFINITY;
            while f_hi > 0.0 {
                lo = hi;
                f_lo = f_hi;
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::Numerical(
                        "power bracket for a BS multiplier diverged".into(),
                    ));
                }
                f_hi = probe(lambda, &mut w, hi)?;
            }
            let band = rho * 0.1 * slack_tol;
            let mut evals = 0;
            while -f_hi > band && evals < 60 {
                evals += 1;
                let x = if lo == 0.0 {
                    if warm { hi / 2.0 } else { hi / 16.0 }
                } else if hi / lo > 2.0 {
                    (lo * hi).sqrt()
                } else {
                    // Alternate secant with plain bisection so a convex
                    // power curve cannot pin progress to one endpoint.
                    let secant = hi - f_hi * (hi - lo) / (f_hi - f_lo);
                    if evals % 2 == 1 && secant > lo && secant < hi {
                        secant
                    } else {
                        0.5 * (lo + hi)
                    }
                };
                if x <= lo || x >= hi {
                    break; // bracket has collapsed to solve noise
                }
                let fx = probe(lambda, &mut w, x)?;
                if fx > 0.0 {
                    lo = x;
                    f_lo = fx;
                } else {
                    hi = x;
                    f_hi = fx;
                }
            }
            if lambda[b] != hi {
                probe(lambda, &mut w, hi)?;
            }
        }
    }
    for b in 0..bs_count {
        let p = bs_powers_of(&w, bs_count, m)[b];
        if p > rho {
            let shrink = C64::new((rho / p).sqrt(), 0.0);
            for wg in &mut w {
                wg.rows_mut(b * m, m).apply(|x| *x *= shrink);
            }
        }
    }
    Ok(w)
}

/// Solves the precoder step for fixed combiners. For the weighted-sum
/// objective the coefficients are fixed, so the exact solution is one
/// complementarity projection. The fairness objective first runs
/// subgradient ascent on μ (tracking λ cheaply alongside), then projects
/// the final multipliers exactly.
///
/// `dual_t` is the step counter shared across outer iterations: the 1/√t
/// decay must keep shrinking over the whole run, or each combiner update
/// re-kicks the multipliers and the saddle point is never approached.
fn dual_inner_loop(
    heff: &[CVec],
    noise_terms: &[f64],
    grouping: &Grouping,
    cfg: &CentralizedConfig,
    duals: &mut DualState,
    dual_t: &mut usize,
) -> Result<InnerOutcome> {
    let bs_count = duals.lambda.len();
    let m = heff[0].len() / bs_count;
    let rho = cfg.rho_bs_w;
    let kcount = heff.len();
    let fairness = cfg.objective == Objective::SumGroupMse;

    let coeff_of = |d: &DualState| -> Vec<f64> {
        if fairness {
            d.mu.clone()
        } else {
            cfg.weights.clone()
        }
    };

    let evaluate = |w_agg: &[CVec]| -> (Vec<f64>, Vec<f64>) {
        let mse: Vec<f64> = (0..kcount)
            .map(|k| mse_from_heff(&heff[k], w_agg, grouping.of_ue[k], noise_terms[k]))
            .collect();
        let powers = bs_powers_of(w_agg, bs_count, m);
        (mse, powers)
    };

    if fairness {
        let scale = lambda_scale(heff, &coeff_of(duals), grouping, rho);
        let mut w_agg = weighted_precoders(heff, &coeff_of(duals), &duals.lambda, grouping)?;
        for step in 1..=cfg.inner_max {
            let (mse, powers) = evaluate(&w_agg);
            *dual_t += 1;
            let decay = (*dual_t as f64).sqrt();
            let mu_prev = duals.mu.clone();
            subgrad_update_mu(duals, &mse, grouping, cfg.zeta0 / decay);
            subgrad_update_lambda(duals, &powers, rho, cfg.eta0 * scale / (decay * rho));
            w_agg = weighted_precoders(heff, &coeff_of(duals), &duals.lambda, grouping)?;
            let mu_res = duals
                .mu
                .iter()
                .zip(&mu_prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                * kcount as f64;
            if mu_res < cfg.inner_tol && step > 1 {
                break;
            }
        }
    }

    let coeff = coeff_of(duals);
    let w_agg = balance_lambda(heff, &coeff, grouping, rho, &mut duals.lambda)?;
    let (mse, _) = evaluate(&w_agg);
    let objective = match cfg.objective {
        Objective::SumMse => mse.iter().zip(&cfg.weights).map(|(m, w)| m * w).sum(),
        Objective::SumGroupMse => grouping
            .members
            .iter()
            .map(|mem| mem.iter().map(|&k| duals.mu[k] * mse[k]).sum::<f64>())
            .sum(),
    };
    Ok(InnerOutcome { w_agg, objective })
}

/// Result of one centralized run.
pub struct CentralizedRun {
    pub precoders: PrecoderSet,
    pub combiners: CombinerSet,
    pub duals: DualState,
    /// Objective value after each outer iteration.
    pub objective: Vec<f64>,
    /// True-channel metrics after each outer iteration (plus one final
    /// entry for the pilot-derived combiners in estimated mode).
    pub trace: IterationTrace,
    pub warnings: Vec<String>,
}

/// Alternating optimization on true or estimated channels.
///
/// Estimated mode front-loads one full uplink pilot round, optimizes on
/// the estimates, and closes with a downlink pilot round whose LS
/// combiners become the operational receivers.
pub fn run_centralized(
    ch: &ChannelSet,
    grouping: &Grouping,
    book: &PilotBook,
    cfg: &CentralizedConfig,
    csi: CsiMode,
    init: &CombinerSet,
    rng: &mut impl Rng,
) -> Result<CentralizedRun> {
    let kcount = ch.ue_count();
    if cfg.weights.len() != kcount {
        return Err(Error::InvalidConfig("one weight per UE required".into()));
    }
    let cost = pilot_cost(
        match cfg.objective {
            Objective::SumMse => crate::types::Algorithm::Centralized,
            Objective::SumGroupMse => crate::types::Algorithm::CentralizedSumGroup,
        },
        book,
    );
    let consumed = match csi {
        CsiMode::Perfect => 0.0,
        CsiMode::Estimated => cost.upfront,
    };

    // Channel knowledge the optimizer sees.
    let h_known: Vec<CMat> = match csi {
        CsiMode::Perfect => ch.aggregated_all(),
        CsiMode::Estimated => {
            let ul = round_ul_full(ch, book, cfg.rho_ue_w, cfg.sigma2_bs_w, rng)?;
            let m = ch.bs_antennas();
            (0..kcount)
                .map(|k| {
                    let mut agg = CMat::zeros(ch.bs_count() * m, ch.ue_antennas());
                    for b in 0..ch.bs_count() {
                        agg.rows_mut(b * m, m)
                            .copy_from(&ul.h_hat[b * kcount + k]);
                    }
                    agg
                })
                .collect()
        }
    };

    let mut v = init.clone();
    let mut duals = DualState::uniform(grouping, ch.bs_count());
    let mut trace = IterationTrace::new(cfg.record_precoders);
    let mut objective = Vec::new();
    let mut warnings = Vec::new();
    let mut w_set = PrecoderSet::zeros(ch.bs_count(), grouping.group_count(), ch.bs_antennas());

    let mut dual_t = 0usize;
    for outer in 1..=cfg.outer_max {
        let heff: Vec<CVec> = (0..kcount).map(|k| &h_known[k] * &v.v[k]).collect();
        let noise_terms: Vec<f64> = v
            .v
            .iter()
            .map(|vk| cfg.sigma2_ue_w * vk.norm_squared())
            .collect();
        let inner = dual_inner_loop(&heff, &noise_terms, grouping, cfg, &mut duals, &mut dual_t)?;
        w_set = PrecoderSet::from_aggregated(&inner.w_agg, ch.bs_count(), ch.bs_antennas())?;
        if !w_set.is_finite() {
            return Err(Error::RunAborted {
                iteration: outer,
                reason: "precoder update produced non-finite values".into(),
            });
        }

        for k in 0..kcount {
            v.v[k] = mmse_combiner(&h_known[k], &inner.w_agg, grouping.of_ue[k], cfg.sigma2_ue_w)?;
        }

        objective.push(inner.objective);
        trace.push(ch, grouping, &cfg.weights, &w_set, &v, cfg.sigma2_ue_w, consumed);

        if outer >= 2 {
            let prev = objective[outer - 2];
            if (prev - inner.objective).abs() <= cfg.outer_rel_tol * prev.abs().max(1e-300) {
                break;
            }
        }
    }

    // Feasibility safety net; the balance phase should make this a no-op.
    let rho = cfg.rho_bs_w;
    let worst = w_set
        .bs_powers()
        .into_iter()
        .fold(0.0f64, f64::max);
    if worst > rho * (1.0 + 1e-9) {
        let a = (rho / worst).sqrt();
        for b in 0..w_set.bs_count() {
            for g in 0..w_set.group_count() {
                let scaled = w_set.w(b, g) * C64::new(a, 0.0);
                w_set.set(b, g, scaled);
            }
        }
        warnings.push(format!(
            "scaled precoders by {a:.6e} to restore per-BS feasibility"
        ));
    }

    if csi == CsiMode::Estimated {
        let dl = round_downlink(ch, &w_set, book, cfg.sigma2_ue_w, rng)?;
        for k in 0..kcount {
            v.v[k] = ls_combiner(&dl.blocks[k].y, &book.dl_pilot(grouping.of_ue[k]))?;
        }
        trace.push(ch, grouping, &cfg.weights, &w_set, &v, cfg.sigma2_ue_w, consumed);
    }

    Ok(CentralizedRun {
        precoders: w_set,
        combiners: v,
        duals,
        objective,
        trace,
        warnings,
    })
}

/// High-SNR closed-form power split across groups.
///
/// For diagonalized per-group links with per-UE gains `c_k` and one total
/// budget ρ, minimizing `Σ_g Σ_{k∈K_g} σ²/(c_k² p_g)` over `Σ_g p_g = ρ`
/// gives `p_g = ρ u_g / Σ_ḡ u_ḡ` with `u_g = √(Σ_{k∈K_g} σ²/c_k²)` and
/// multiplier `κ = (Σ_g u_g / ρ)²`, which satisfies
/// `κ p_g² = Σ_{k∈K_g} σ²/c_k²`.
pub fn highsnr_power_alloc(
    c_diag: &[f64],
    grouping: &Grouping,
    sigma2: f64,
    rho: f64,
) -> Result<(Vec<f64>, f64)> {
    if c_diag.len() != grouping.ue_count() {
        return Err(Error::InvalidConfig("one diagonal gain per UE required".into()));
    }
    if c_diag.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::DegenerateInput(
            "diagonal gains must be positive".into(),
        ));
    }
    if !(rho > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::InvalidConfig("rho and sigma2 must be positive".into()));
    }
    let u: Vec<f64> = grouping
        .members
        .iter()
        .map(|mem| {
            mem.iter()
                .map(|&k| sigma2 / (c_diag[k] * c_diag[k]))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let total: f64 = u.iter().sum();
    let kappa = (total / rho).powi(2);
    let mut p: Vec<f64> = u.iter().map(|ug| rho * ug / total).collect();
    // Force the exact budget; floating summation may be off by an ulp.
    let head: f64 = p[..p.len() - 1].iter().sum();
    let last = p.len() - 1;
    p[last] = rho - head;
    Ok((p, kappa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mse_ue, sinr_ue};
    use crate::rng::{cn_matrix, cn_vector, purpose, stream_rng};
    use crate::scenario::{generate_channels, generate_topology, ScenarioConfig};
    use crate::solver::init_combiners;

    fn rand_heff(k: usize, bm: usize, seed: u64) -> Vec<CVec> {
        let mut rng = stream_rng(seed, 0, 0);
        (0..k).map(|_| cn_vector(&mut rng, bm, 1.0)).collect()
    }

    #[test]
    fn mmse_combiner_scalar_formula() {
        // N=1: v = t_own / (Σ_g |t_g|² + σ²).
        let h = CMat::from_vec(2, 1, vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let w = vec![
            CVec::from_vec(vec![C64::new(0.5, 0.0), C64::new(0.0, 0.5)]),
            CVec::from_vec(vec![C64::new(0.0, 0.2), C64::new(0.2, 0.0)]),
        ];
        let t0 = (h.adjoint() * &w[0])[(0, 0)];
        let t1 = (h.adjoint() * &w[1])[(0, 0)];
        let sigma2 = 0.3;
        let v = mmse_combiner(&h, &w, 0, sigma2).unwrap();
        let expect = t0 / C64::new(t0.norm_sqr() + t1.norm_sqr() + sigma2, 0.0);
        assert!((v[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn mmse_combiner_achieves_mmse_sinr_duality() {
        let mut rng = stream_rng(51, 0, 0);
        let h = cn_matrix(&mut rng, 6, 2, 1.0); // BM=6, N=2
        let w: Vec<CVec> = (0..3).map(|_| cn_vector(&mut rng, 6, 0.5)).collect();
        let sigma2 = 0.2;
        for own in 0..3 {
            let v = mmse_combiner(&h, &w, own, sigma2).unwrap();
            let mse = mse_ue(&h, &w, &v, own, sigma2);
            let sinr = sinr_ue(&h, &w, &v, own, sigma2);
            assert!(
                (mse - 1.0 / (1.0 + sinr)).abs() < 1e-9,
                "MSE {mse} vs 1/(1+SINR) {}",
                1.0 / (1.0 + sinr)
            );
            // No other combiner does better (spot-check a few perturbations).
            for _ in 0..5 {
                let v2 = &v + cn_vector(&mut rng, 2, 0.01);
                assert!(mse_ue(&h, &w, &v2, own, sigma2) >= mse - 1e-12);
            }
        }
    }

    #[test]
    fn mmse_combiner_zero_precoders_gives_zero() {
        let mut rng = stream_rng(52, 0, 0);
        let h = cn_matrix(&mut rng, 4, 2, 1.0);
        let w = vec![CVec::zeros(4), CVec::zeros(4)];
        let v = mmse_combiner(&h, &w, 0, 0.1).unwrap();
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn mmse_combiner_err_on_singular_zero_noise() {
        let mut rng = stream_rng(53, 0, 0);
        let h = cn_matrix(&mut rng, 4, 2, 1.0);
        // One precoded direction, two RX antennas, no noise: rank 1 < N.
        let w = vec![cn_vector(&mut rng, 4, 1.0)];
        assert!(mmse_combiner(&h, &w, 0, 0.0).is_err());
    }

    #[test]
    fn ls_combiner_matches_mmse_direction_without_noise() {
        // Zero noise, G >= N: the pilot Gram equals the signal covariance,
        // so the LS combiner attains the same SINR as exact MMSE at σ² = 0.
        let mut rng = stream_rng(54, 0, 0);
        let h = cn_matrix(&mut rng, 6, 2, 1.0);
        let w: Vec<CVec> = (0..3).map(|_| cn_vector(&mut rng, 6, 0.5)).collect();
        let book = PilotBook::with_lengths(1, 2, 3, 2, 1, 3, 2048).unwrap();
        // Build the downlink block by hand: Y = Σ_g g_g p_g^H.
        let mut y = CMat::zeros(2, 2048);
        for g in 0..3 {
            let gk = h.adjoint() * &w[g];
            y += gk * book.dl_pilot(g).adjoint();
        }
        let v_ls = ls_combiner(&y, &book.dl_pilot(1)).unwrap();
        let v_ref = mmse_combiner(&h, &w, 1, 0.0).unwrap_or_else(|_| v_ls.clone());
        let s_ls = sinr_ue(&h, &w, &v_ls, 1, 0.05);
        let s_ref = sinr_ue(&h, &w, &v_ref, 1, 0.05);
        assert!(
            (s_ls - s_ref).abs() <= 1e-6 * s_ref.abs(),
            "SINR {s_ls} vs {s_ref}"
        );
    }

    #[test]
    fn ls_combiner_scalar_case() {
        // N=1: v = (Y p)/(‖Y‖²).
        let y = CMat::from_vec(1, 2, vec![C64::new(2.0, 0.0), C64::new(0.0, 1.0)]);
        let p = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let v = ls_combiner(&y, &p).unwrap();
        let expect = C64::new(2.0, 1.0) / C64::new(5.0, 0.0);
        assert!((v[0] - expect).norm() < 1e-14);
    }

    #[test]
    fn weighted_precoders_single_ue_closed_form() {
        // K=G=1, B=1: (c h h^H + λ)^{-1} c h = c h / (λ + c ‖h‖²).
        let h = rand_heff(1, 3, 55);
        let grouping = Grouping::new(vec![0], 1).unwrap();
        let (c, lambda) = (0.8, 0.4);
        let w = weighted_precoders(&h, &[c], &[lambda], &grouping).unwrap();
        let expect = &h[0] * C64::new(c / (lambda + c * h[0].norm_squared()), 0.0);
        assert!((&w[0] - &expect).norm() < 1e-12);
    }

    #[test]
    fn weighted_precoders_are_stationary_for_the_lagrangian() {
        // Central finite differences of
        //   L(w) = Σ_k c_k MSE_k(w) + Σ_b λ_b Σ_g ‖w_{b,g}‖²
        // at the returned precoders stay at the numerical-noise floor.
        let kcount = 4;
        let bm = 4; // B=2, M=2
        let heff = rand_heff(kcount, bm, 56);
        let grouping = Grouping::new(vec![0, 0, 1, 1], 2).unwrap();
        let coeff = [0.7, 0.3, 0.55, 0.45];
        let lambda = [0.6, 0.9];
        let noise = [0.1; 4];
        let w = weighted_precoders(&heff, &coeff, &lambda, &grouping).unwrap();

        let lagrangian = |w_agg: &[CVec]| -> f64 {
            let mut l = 0.0;
            for k in 0..kcount {
                l += coeff[k] * mse_from_heff(&heff[k], w_agg, grouping.of_ue[k], noise[k]);
            }
            for (b, &lam) in lambda.iter().enumerate() {
                for wg in w_agg {
                    l += lam * wg.rows(b * 2, 2).norm_squared();
                }
            }
            l
        };

        let h_step = 1e-5;
        let mut grad_norm_sq = 0.0;
        for g in 0..2 {
            for i in 0..bm {
                for part in 0..2 {
                    let mut plus = w.clone();
                    let mut minus = w.clone();
                    let delta = if part == 0 {
                        C64::new(h_step, 0.0)
                    } else {
                        C64::new(0.0, h_step)
                    };
                    plus[g][i] += delta;
                    minus[g][i] -= delta;
                    let d = (lagrangian(&plus) - lagrangian(&minus)) / (2.0 * h_step);
                    grad_norm_sq += d * d;
                }
            }
        }
        assert!(
            grad_norm_sq.sqrt() < 1e-8,
            "finite-difference gradient norm {:e}",
            grad_norm_sq.sqrt()
        );
    }

    #[test]
    fn mu_update_examples() {
        let grouping = Grouping::new(vec![0, 0], 1).unwrap();
        let mut duals = DualState::uniform(&grouping, 1);
        // Equal MSEs: fixed point.
        let t = subgrad_update_mu(&mut duals, &[0.9, 0.9], &grouping, 0.2);
        assert_eq!(duals.mu, vec![0.5, 0.5]);
        assert!((t[0] - 0.9).abs() < 1e-15);
        // Unequal MSEs shift weight onto the worse UE: t = 1.0,
        // μ = [0.5+0.02, 0.5−0.02] (already normalized).
        let t = subgrad_update_mu(&mut duals, &[1.2, 0.8], &grouping, 0.1);
        assert!((duals.mu[0] - 0.52).abs() < 1e-12);
        assert!((duals.mu[1] - 0.48).abs() < 1e-12);
        assert!((t[0] - (0.52 * 1.2 + 0.48 * 0.8)).abs() < 1e-12);
        // Clamp-and-reset: a huge step drives one weight to zero.
        let mut duals = DualState::uniform(&grouping, 1);
        subgrad_update_mu(&mut duals, &[2.0, 0.1], &grouping, 10.0);
        assert!((duals.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(duals.mu[1] == 0.0);
    }

    #[test]
    fn lambda_update_examples() {
        let grouping = Grouping::new(vec![0], 1).unwrap();
        let mut duals = DualState::uniform(&grouping, 2);
        duals.lambda = vec![0.2, 0.01];
        subgrad_update_lambda(&mut duals, &[1.5, 0.5], 1.0, 0.1);
        assert!((duals.lambda[0] - 0.25).abs() < 1e-15);
        assert_eq!(duals.lambda[1], 0.0); // clamped at zero
    }

    #[test]
    fn highsnr_alloc_closed_form() {
        // Two singleton groups, c² = [1, 4], σ² = 1, ρ = 1:
        // u = [1, 1/2], p = [2/3, 1/3], κ = 9/4.
        let grouping = Grouping::new(vec![0, 1], 2).unwrap();
        let (p, kappa) = highsnr_power_alloc(&[1.0, 2.0], &grouping, 1.0, 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((kappa - 2.25).abs() < 1e-15);
        // Multiplier identity κ p_g² = Σ σ²/c².
        assert!((kappa * p[0] * p[0] - 1.0).abs() < 1e-12);
        assert!((kappa * p[1] * p[1] - 0.25).abs() < 1e-12);
        // Exact budget.
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        // Symmetric gains split evenly.
        let (p, _) = highsnr_power_alloc(&[1.5, 1.5], &grouping, 0.5, 2.0).unwrap();
        assert!((p[0] - p[1]).abs() < 1e-15);
        assert!(highsnr_power_alloc(&[1.0, 0.0], &grouping, 1.0, 1.0).is_err());
    }

    fn desk_instance(seed: u64) -> (ScenarioConfig, crate::scenario::Topology, ChannelSet) {
        let cfg = ScenarioConfig {
            bs_count: 4,
            bs_antennas: 2,
            ue_count: 4,
            ue_antennas: 2,
            group_sizes: vec![2, 2],
            ..ScenarioConfig::desk()
        };
        let topo = generate_topology(&cfg, &mut stream_rng(seed, 0, purpose::TOPOLOGY)).unwrap();
        let ch =
            generate_channels(&cfg, &topo, &mut stream_rng(seed, 0, purpose::CHANNELS)).unwrap();
        (cfg, topo, ch)
    }

    #[test]
    fn alternating_objective_is_monotone_and_feasible() {
        let (cfg, topo, ch) = desk_instance(57);
        let book = PilotBook::orthogonal(cfg.ue_count, cfg.ue_antennas, 2).unwrap();
        for objective in [Objective::SumMse, Objective::SumGroupMse] {
            let mut ccfg =
                CentralizedConfig::new(objective, cfg.ue_count, cfg.rho_bs_w(), cfg.noise_ue_w());
            ccfg.outer_max = 30;
            ccfg.inner_max = 300;
            let init = init_combiners(
                cfg.ue_count,
                cfg.ue_antennas,
                &mut stream_rng(57, 0, purpose::INIT_COMBINERS),
            );
            let mut rng = stream_rng(57, 0, purpose::NOISE_BASE);
            let run = run_centralized(
                &ch, &topo.grouping, &book, &ccfg, CsiMode::Perfect, &init, &mut rng,
            )
            .unwrap();
            if objective == Objective::SumMse {
                // Fixed coefficients: the inner solve is exact, so the
                // alternating objective cannot increase.
                for pair in run.objective.windows(2) {
                    assert!(
                        pair[1] <= pair[0] + 1e-9 * pair[0].abs(),
                        "objective increased: {} -> {}",
                        pair[0],
                        pair[1]
                    );
                }
            } else {
                // μ ascends toward a saddle, so per-step monotonicity is
                // not promised; the run must still improve overall.
                let first = run.objective[0];
                let last = *run.objective.last().unwrap();
                assert!(last <= first, "fairness run regressed: {first} -> {last}");
            }
            let rho = cfg.rho_bs_w();
            let powers = run.precoders.bs_powers();
            for &p in &powers {
                assert!(p <= rho * (1.0 + 1e-9), "power {p} over budget {rho}");
            }
            // Complementary slackness: active multipliers pin the budget.
            for (b, &p) in powers.iter().enumerate() {
                if run.duals.lambda[b] > 1e-9 {
                    assert!(
                        (p - rho).abs() <= 1e-6 * rho,
                        "BS {b}: lambda {} but power {p} off the budget {rho}",
                        run.duals.lambda[b]
                    );
                }
            }
            // μ sums to one per group.
            for members in &topo.grouping.members {
                let s: f64 = members.iter().map(|&k| run.duals.mu[k]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn estimated_mode_runs_and_traces_final_combiners() {
        let (cfg, topo, ch) = desk_instance(58);
        let book = PilotBook::orthogonal(cfg.ue_count, cfg.ue_antennas, 2).unwrap();
        let mut ccfg = CentralizedConfig::new(
            Objective::SumMse,
            cfg.ue_count,
            cfg.rho_bs_w(),
            cfg.noise_ue_w(),
        );
        ccfg.outer_max = 10;
        ccfg.inner_max = 100;
        ccfg.rho_ue_w = cfg.rho_ue_w();
        ccfg.sigma2_bs_w = cfg.noise_bs_w();
        let init = init_combiners(
            cfg.ue_count,
            cfg.ue_antennas,
            &mut stream_rng(58, 0, purpose::INIT_COMBINERS),
        );
        let mut rng = stream_rng(58, 0, purpose::NOISE_BASE);
        let run = run_centralized(
            &ch, &topo.grouping, &book, &ccfg, CsiMode::Estimated, &init, &mut rng,
        )
        .unwrap();
        // One extra trace entry for the pilot-domain combiners.
        assert_eq!(run.trace.len(), run.objective.len() + 1);
        assert!(run.trace.sum_rate.last().unwrap().is_finite());
        assert!(run.combiners.is_finite());
    }
}
