//! Fast self-checks behind `mgmc check`.
//!
//! Each check exercises one structural invariant end to end in a few
//! hundred milliseconds; together they catch miswired estimators, broken
//! power accounting, and lost determinism without running a full
//! experiment.

use crate::airlink::{round_ul_full, PilotBook};
use crate::harness::{run_experiment, to_json_string, ExperimentSpec};
use crate::linalg::re_inner;
use crate::metrics::{mse_ue, pilot_cost, sinr_ue};
use crate::rng::{cn_vector, stream_rng};
use crate::scenario::{generate_channels, generate_topology, Grouping, ScenarioConfig};
use crate::solver::centralized::{mmse_combiner, run_centralized, CentralizedConfig, Objective};
use crate::solver::distributed::{br_direction, run_bidirectional, BidirConfig};
use crate::solver::init_combiners;
use crate::types::{Algorithm, CsiMode, PrecoderSet};
use crate::Result;

pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        bs_count: 4,
        bs_antennas: 2,
        ue_count: 4,
        ue_antennas: 2,
        group_sizes: vec![2, 2],
        ..ScenarioConfig::desk()
    }
}

fn check(name: &'static str, body: impl FnOnce() -> Result<String>) -> CheckReport {
    match body() {
        Ok(detail) => CheckReport { name, passed: true, detail },
        Err(e) => CheckReport { name, passed: false, detail: e.to_string() },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(crate::Error::Numerical(msg()))
    }
}

fn noiseless_estimation() -> Result<String> {
    let cfg = small_scenario();
    let topo = generate_topology(&cfg, &mut stream_rng(7, 0, 0))?;
    let ch = generate_channels(&cfg, &topo, &mut stream_rng(7, 0, 1))?;
    let book = PilotBook::orthogonal(cfg.ue_count, cfg.ue_antennas, cfg.group_count())?;
    let round = round_ul_full(&ch, &book, cfg.rho_ue_w(), 0.0, &mut stream_rng(7, 0, 8))?;
    let mut worst = 0.0f64;
    for b in 0..cfg.bs_count {
        for k in 0..cfg.ue_count {
            let err = (&round.h_hat[b * cfg.ue_count + k] - ch.h(b, k)).norm();
            worst = worst.max(err);
        }
    }
    ensure(worst <= 1e-9, || format!("noiseless LS error {worst:.2e} above 1e-9"))?;
    Ok(format!("worst channel estimation error {worst:.2e} without noise"))
}

fn pilot_cost_table() -> Result<String> {
    let book = PilotBook::orthogonal(32, 2, 8)?;
    let expect = [
        (Algorithm::Centralized, 72.0, 0.0),
        (Algorithm::CentralizedSumGroup, 72.0, 0.0),
        (Algorithm::LocalMmse, 0.0, 40.0),
        (Algorithm::LocalMf, 0.0, 16.0),
        (Algorithm::Br, 0.0, 48.0),
        (Algorithm::BrGs, 0.0, 24.0),
        (Algorithm::Gb, 0.0, 24.0),
    ];
    for (algo, upfront, per_iter) in expect {
        let cost = pilot_cost(algo, &book);
        ensure(cost.upfront == upfront && cost.per_iteration == per_iter, || {
            format!(
                "{algo}: expected ({upfront}, {per_iter}) symbols, got ({}, {})",
                cost.upfront, cost.per_iteration
            )
        })?;
    }
    Ok("per-iteration training costs match the canonical K=32, N=2, G=8 table".into())
}

fn mse_sinr_duality() -> Result<String> {
    let cfg = small_scenario();
    let topo = generate_topology(&cfg, &mut stream_rng(9, 0, 0))?;
    let ch = generate_channels(&cfg, &topo, &mut stream_rng(9, 0, 1))?;
    let g = cfg.group_count();
    let mut rng = stream_rng(9, 0, 8);
    let mut w = PrecoderSet::zeros(cfg.bs_count, g, cfg.bs_antennas);
    for b in 0..cfg.bs_count {
        for gg in 0..g {
            w.set(b, gg, cn_vector(&mut rng, cfg.bs_antennas, 1.0) * crate::C64::from(0.05));
        }
    }
    let w_agg = w.aggregated_all();
    let sigma2 = cfg.noise_ue_w();
    let mut worst = 0.0f64;
    for k in 0..cfg.ue_count {
        let h = ch.aggregated(k);
        let own = topo.grouping.of_ue[k];
        let v = mmse_combiner(&h, &w_agg, own, sigma2)?;
        let mse = mse_ue(&h, &w_agg, &v, own, sigma2);
        let sinr = sinr_ue(&h, &w_agg, &v, own, sigma2);
        worst = worst.max((mse - 1.0 / (1.0 + sinr)).abs());
    }
    ensure(worst <= 1e-10, || {
        format!("|MSE - 1/(1+SINR)| = {worst:.2e} at the MMSE combiner")
    })?;
    Ok(format!("MSE and SINR agree at the MMSE combiner to {worst:.2e}"))
}

fn best_response_descends() -> Result<String> {
    let grouping = Grouping::new(vec![0, 0, 1, 1], 2)?;
    let m = 3;
    let lambda = 0.3;
    let mut worst = f64::INFINITY;
    for seed in 0..20u64 {
        let mut rng = stream_rng(13, seed, 8);
        let heff: Vec<_> = (0..4).map(|_| cn_vector(&mut rng, m, 1.0)).collect();
        let w_prev: Vec<_> = (0..2).map(|_| cn_vector(&mut rng, m, 1.0)).collect();
        let xi: Vec<_> =
            (0..2).map(|_| cn_vector(&mut rng, m, 1.0) * crate::C64::from(0.1)).collect();
        let weights = [1.0, 0.7, 1.3, 1.0];
        let delta = br_direction(&heff, &weights, &grouping, lambda, &w_prev, &xi)?;
        for g in 0..2 {
            let mut grad = xi[g].clone();
            for k in grouping.members[g].iter().copied() {
                grad -= &heff[k] * crate::C64::from(weights[k]);
            }
            grad += &w_prev[g] * crate::C64::from(lambda);
            worst = worst.min(re_inner(&grad, &delta[g]));
        }
    }
    ensure(worst >= -1e-10, || format!("ascent direction found: Re<grad, delta> = {worst:.2e}"))?;
    Ok(format!("best-response steps never ascend (min alignment {worst:.2e})"))
}

fn power_budgets_hold() -> Result<String> {
    let cfg = small_scenario();
    let topo = generate_topology(&cfg, &mut stream_rng(21, 0, 0))?;
    let ch = generate_channels(&cfg, &topo, &mut stream_rng(21, 0, 1))?;
    let book = PilotBook::orthogonal(cfg.ue_count, cfg.ue_antennas, cfg.group_count())?;
    let init = init_combiners(cfg.ue_count, cfg.ue_antennas, &mut stream_rng(21, 0, 2));
    let mut c = BidirConfig::new(
        cfg.ue_count,
        cfg.rho_bs_w(),
        cfg.rho_ue_w(),
        cfg.noise_bs_w(),
        cfg.noise_ue_w(),
    );
    c.iterations = 4;
    let rho = cfg.rho_bs_w();
    let mut worst = 0.0f64;
    for algo in [
        Algorithm::LocalMmse,
        Algorithm::LocalMf,
        Algorithm::Br,
        Algorithm::BrGs,
        Algorithm::Gb,
    ] {
        let mut rng = stream_rng(21, 0, 8 + algo.stream_id());
        let run =
            run_bidirectional(algo, &ch, &topo.grouping, &book, &c, CsiMode::Estimated, &init, &mut rng)?;
        for p in run.precoders.bs_powers() {
            worst = worst.max(p / rho);
        }
    }
    ensure(worst <= 1.0 + 2e-9, || {
        format!("per-BS power exceeds budget by factor {worst:.12}")
    })?;
    Ok(format!("per-BS transmit power within budget (max ratio {worst:.9})"))
}

fn centralized_stays_feasible() -> Result<String> {
    let cfg = small_scenario();
    let topo = generate_topology(&cfg, &mut stream_rng(33, 0, 0))?;
    let ch = generate_channels(&cfg, &topo, &mut stream_rng(33, 0, 1))?;
    let book = PilotBook::orthogonal(cfg.ue_count, cfg.ue_antennas, cfg.group_count())?;
    let init = init_combiners(cfg.ue_count, cfg.ue_antennas, &mut stream_rng(33, 0, 2));
    let mut c = CentralizedConfig::new(
        Objective::SumMse,
        cfg.ue_count,
        cfg.rho_bs_w(),
        cfg.noise_ue_w(),
    );
    c.outer_max = 30;
    let run = run_centralized(
        &ch,
        &topo.grouping,
        &book,
        &c,
        CsiMode::Perfect,
        &init,
        &mut stream_rng(33, 0, 8),
    )?;
    let rho = cfg.rho_bs_w();
    let max_ratio = run
        .precoders
        .bs_powers()
        .into_iter()
        .fold(0.0f64, |acc, p| acc.max(p / rho));
    ensure(max_ratio <= 1.0 + 1e-6, || format!("power ratio {max_ratio:.9} above budget"))?;
    let first = run.objective.first().copied().unwrap_or(f64::NAN);
    let best = run.objective.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(best.is_finite() && best <= first + 1e-12, || {
        format!("objective never improved: first {first:.6}, best {best:.6}")
    })?;
    Ok(format!(
        "centralized design feasible (power ratio {max_ratio:.6}), objective {first:.4} -> {best:.4}"
    ))
}

fn experiments_are_deterministic() -> Result<String> {
    let mut spec = ExperimentSpec::desk();
    spec.scenario = small_scenario();
    spec.algorithms = vec![Algorithm::LocalMmse, Algorithm::BrGs];
    spec.iterations = 2;
    spec.drops = 2;
    spec.seed = 5;
    let a = to_json_string(&run_experiment(&spec)?)?;
    let b = to_json_string(&run_experiment(&spec)?)?;
    ensure(a == b, || "two runs of the same spec serialized differently".into())?;
    Ok("identical seeds reproduce byte-identical results".into())
}

/// Runs every self-check; failures carry the diagnostic in `detail`.
pub fn run_all_checks() -> Vec<CheckReport> {
    vec![
        check("noiseless-estimation", noiseless_estimation),
        check("pilot-cost-table", pilot_cost_table),
        check("mse-sinr-duality", mse_sinr_duality),
        check("best-response-descent", best_response_descends),
        check("power-budgets", power_budgets_hold),
        check("centralized-feasibility", centralized_stays_feasible),
        check("determinism", experiments_are_deterministic),
    ]
}
