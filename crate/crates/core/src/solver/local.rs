//! Per-BS precoder designs from local effective channels.
//!
//! BS `b` sees only its own effective UE channels `e_{b,k} = H_{b,k} v_k`
//! (or pilot observations of them) and regularizes with a single local
//! multiplier λ chosen to meet the power budget:
//!
//! ```text
//! MMSE: w_{b,g} = (Σ_k ω_k e_k e_k^H + λ I)^{-1} Σ_{k∈K_g} ω_k e_k
//! MF:   w_{b,g} = (1/λ) Σ_{k∈K_g} ω_k e_k
//! ```
//!
//! `λ ↦ Σ_g ‖w_{b,g}(λ)‖²` is non-increasing, so the budget is met by
//! bracketing and bisection; the matched filter admits the closed form
//! `λ* = √(Σ_g ‖u_g‖² / ρ)`.
//!
//! Pilot variants rebuild the same expressions from one received block
//! without forming explicit channel estimates. With `q_k = Y p_k`, the
//! correlated Gram `(1/τ) Σ_k ω_k q_k q_k^H` concentrates on
//! `βτ Σ_k ω_k e_k e_k^H` plus a noise floor of `σ² Σ_k ω_k · I`, so the
//! regularizer becomes `(τβλ − σ² Σω) I`, which debiases the noise and
//! stays positive definite for `λ > σ² Σω / (τβ)`; a λ floor enforces
//! that. At minimum-length books with unit weights this reduces to the
//! plain `Y Y^H + τ(βλ − σ²) I` form.

use crate::linalg::{add_outer, HermitianSolver, OnSingular};
use crate::scenario::Grouping;
use crate::types::{C64, CMat, CVec};
use crate::{Error, Result};

/// Group channels `u_g = Σ_{k∈K_g} ω_k e_k` from per-UE local channels.
pub fn group_channels(heff_b: &[CVec], weights: &[f64], grouping: &Grouping) -> Vec<CVec> {
    let m = heff_b[0].len();
    grouping
        .members
        .iter()
        .map(|members| {
            let mut u = CVec::zeros(m);
            for &k in members {
                u += &heff_b[k] * C64::new(weights[k], 0.0);
            }
            u
        })
        .collect()
}

/// Local MMSE precoders for one BS at multiplier λ.
pub fn local_mmse(
    heff_b: &[CVec],
    weights: &[f64],
    grouping: &Grouping,
    lambda: f64,
) -> Result<Vec<CVec>> {
    let m = heff_b[0].len();
    let mut a = CMat::zeros(m, m);
    for (e, &w) in heff_b.iter().zip(weights) {
        if w != 0.0 {
            add_outer(&mut a, e, w);
        }
    }
    for i in 0..m {
        a[(i, i)] += C64::new(lambda, 0.0);
    }
    let solver = HermitianSolver::new(a, OnSingular::Load)?;
    Ok(group_channels(heff_b, weights, grouping)
        .iter()
        .map(|u| solver.solve_vec(u))
        .collect())
}

/// Local matched-filter precoders `u_g / λ`.
pub fn local_mf(
    heff_b: &[CVec],
    weights: &[f64],
    grouping: &Grouping,
    lambda: f64,
) -> Result<Vec<CVec>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig("matched filter needs lambda > 0".into()));
    }
    Ok(group_channels(heff_b, weights, grouping)
        .iter()
        .map(|u| u / C64::new(lambda, 0.0))
        .collect())
}

/// The matched-filter multiplier that spends the budget exactly:
/// `λ* = √(Σ_g ‖u_g‖² / ρ)`; zero when all group channels vanish.
pub fn mf_lambda_star(group_ch: &[CVec], rho: f64) -> f64 {
    let total: f64 = group_ch.iter().map(|u| u.norm_squared()).sum();
    (total / rho).sqrt()
}

/// Default λ floor outside pilot mode.
pub const LAMBDA_MIN: f64 = 1e-9;

/// Pilot-domain Gram and per-group right-hand sides, shared by the local
/// MMSE map and the best-response operators.
pub(crate) struct PilotGram {
    /// `(1/τ) Σ ω (Y p)(Y p)^H`.
    pub s: CMat,
    /// `√β Σ ω Y p` accumulated per group.
    pub r: Vec<CVec>,
    pub tau: f64,
    pub beta: f64,
    pub sigma2: f64,
    /// Total weight behind the Gram's noise floor (`Σ_k ω_k`, or `G`).
    pub noise_weight: f64,
}

impl PilotGram {
    /// Gram from a UE-effective round block: one pilot and weight per UE,
    /// right-hand sides summed over group members.
    pub fn from_ue_round(
        y: &CMat,
        pilots: &[CVec],
        weights: &[f64],
        grouping: &Grouping,
        beta: f64,
        sigma2_bs: f64,
    ) -> Result<Self> {
        if pilots.len() != weights.len() || pilots.len() != grouping.ue_count() {
            return Err(Error::InvalidConfig("one pilot and weight per UE".into()));
        }
        let m = y.nrows();
        let tau = y.ncols() as f64;
        let q: Vec<CVec> = pilots.iter().map(|p| y * p).collect();
        let mut s = CMat::zeros(m, m);
        for (qk, &w) in q.iter().zip(weights) {
            if w != 0.0 {
                add_outer(&mut s, qk, w / tau);
            }
        }
        let sqrt_beta = beta.sqrt();
        let r = grouping
            .members
            .iter()
            .map(|members| {
                let mut acc = CVec::zeros(m);
                for &k in members {
                    acc += &q[k] * C64::new(weights[k] * sqrt_beta, 0.0);
                }
                acc
            })
            .collect();
        let noise_weight = weights.iter().sum();
        Ok(Self { s, r, tau, beta, sigma2: sigma2_bs, noise_weight })
    }

    /// Gram from a group-effective round block (weights already folded
    /// into the air); right-hand sides are `√β Y p_g` per group.
    pub fn from_group_round(y: &CMat, group_pilots: &[CVec], beta: f64, sigma2_bs: f64) -> Self {
        let m = y.nrows();
        let tau = y.ncols() as f64;
        let q: Vec<CVec> = group_pilots.iter().map(|p| y * p).collect();
        let mut s = CMat::zeros(m, m);
        for qg in &q {
            add_outer(&mut s, qg, 1.0 / tau);
        }
        let sqrt_beta = C64::new(beta.sqrt(), 0.0);
        let r = q.into_iter().map(|qg| qg * sqrt_beta).collect();
        Self { s, r, tau, beta, sigma2: sigma2_bs, noise_weight: group_pilots.len() as f64 }
    }

    /// Smallest λ keeping the debiased Gram positive definite.
    pub fn lambda_min(&self) -> f64 {
        (self.sigma2 * self.noise_weight / (self.tau * self.beta) + 1e-9).max(LAMBDA_MIN)
    }

    /// `S + (τβλ − σ² Σω) I`, the pilot-domain image of `βτ(Σ ω e e^H + λ I)`.
    pub fn regularized(&self, lambda: f64) -> CMat {
        let mut a = self.s.clone();
        let load = self.tau * self.beta * lambda - self.sigma2 * self.noise_weight;
        for i in 0..a.nrows() {
            a[(i, i)] += C64::new(load, 0.0);
        }
        a
    }
}

/// Pilot-domain MMSE precoder map for one BS, built once per received
/// block and evaluated at many λ during the power search.
pub struct UePilotPrecoder {
    gram: PilotGram,
}

impl UePilotPrecoder {
    pub fn new(
        y: &CMat,
        pilots: &[CVec],
        weights: &[f64],
        grouping: &Grouping,
        beta: f64,
        sigma2_bs: f64,
    ) -> Result<Self> {
        Ok(Self { gram: PilotGram::from_ue_round(y, pilots, weights, grouping, beta, sigma2_bs)? })
    }

    pub fn lambda_min(&self) -> f64 {
        self.gram.lambda_min()
    }

    /// `w_g(λ) = (S + (τβλ − σ² Σω) I)^{-1} r_g`.
    pub fn precoders(&self, lambda: f64) -> Result<Vec<CVec>> {
        let solver = HermitianSolver::new(self.gram.regularized(lambda), OnSingular::Load)?;
        Ok(self.gram.r.iter().map(|r| solver.solve_vec(r)).collect())
    }
}

/// Pilot-domain matched-filter map from one group-round block.
pub struct GroupPilotPrecoder {
    /// `f̂_g = Y p_g / (τ √β)`.
    f_hat: Vec<CVec>,
}

impl GroupPilotPrecoder {
    pub fn new(y: &CMat, group_pilots: &[CVec], beta: f64) -> Self {
        let tau = y.ncols() as f64;
        let scale = C64::new(tau * beta.sqrt(), 0.0);
        let f_hat = group_pilots.iter().map(|p| (y * p) / scale).collect();
        Self { f_hat }
    }

    pub fn f_hat(&self) -> &[CVec] {
        &self.f_hat
    }

    /// `w_g = f̂_g / λ`.
    pub fn precoders(&self, lambda: f64) -> Result<Vec<CVec>> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfig("matched filter needs lambda > 0".into()));
        }
        Ok(self.f_hat.iter().map(|f| f / C64::new(lambda, 0.0)).collect())
    }

    pub fn lambda_star(&self, rho: f64) -> f64 {
        mf_lambda_star(&self.f_hat, rho)
    }
}

fn total_power(w: &[CVec]) -> f64 {
    w.iter().map(|x| x.norm_squared()).sum()
}

/// Finds the smallest λ ≥ `lambda_min` whose precoders respect the budget:
/// doubles an upper bracket until feasible, then bisects 60 times, landing
/// the power in `[ρ(1−1e−6), ρ]` whenever the constraint is active.
///
/// Fails with a diagnostic if the power map is detected increasing in λ.
pub fn bisect_power_lambda<F>(
    precoders_at: F,
    rho: f64,
    lambda_min: f64,
) -> Result<(f64, Vec<CVec>)>
where
    F: Fn(f64) -> Result<Vec<CVec>>,
{
    let w_min = precoders_at(lambda_min)?;
    let p_min = total_power(&w_min);
    if p_min <= rho {
        return Ok((lambda_min, w_min));
    }

    let mut lo = lambda_min;
    let mut hi = if lambda_min > 0.0 { lambda_min * 2.0 } else { 1e-9 };
    let mut p_prev = p_min;
    let mut bracket = None;
    for _ in 0..200 {
        let w = precoders_at(hi)?;
        let p = total_power(&w);
        if p > p_prev * (1.0 + 1e-6) + 1e-300 {
            return Err(Error::Numerical(
                "power is not non-increasing in lambda; bisection invalid".into(),
            ));
        }
        if p <= rho {
            bracket = Some((hi, w, p));
            break;
        }
        lo = hi;
        p_prev = p;
        hi *= 2.0;
    }
    let (mut hi, mut w_hi, mut p_hi) =
        bracket.ok_or_else(|| Error::Numerical("no feasible lambda found while bracketing".into()))?;

    for _ in 0..60 {
        if p_hi >= rho * (1.0 - 1e-6) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let w = precoders_at(mid)?;
        let p = total_power(&w);
        if p <= rho {
            hi = mid;
            w_hi = w;
            p_hi = p;
        } else {
            lo = mid;
        }
    }
    Ok((hi, w_hi))
}
