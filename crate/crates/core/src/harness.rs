//! Monte-Carlo experiment orchestration, persistence, and figure tables.
//!
//! An [`ExperimentSpec`] fixes the scenario, the algorithms, one CSI mode,
//! the iteration and drop budgets, a master seed, and optionally a sweep
//! over one axis. [`run_experiment`] draws a fresh topology, channel set,
//! and initial combiners per drop; every algorithm inside a drop consumes
//! identical channels and initial combiners, with noise drawn from a
//! per-(drop, algorithm) stream, so runs are reproducible bit for bit and
//! independent of worker count.
//!
//! Sweeps over the resource block size reuse one set of drops (only the
//! overhead discount changes); sweeps over scenario fields rerun the drops
//! per value. Results serialize to JSON (full metadata) or to a flat CSV
//! with the fixed header
//! `algorithm,csi_mode,sweep_var,sweep_value,iteration,mean_R,se_R,mean_Reff,se_Reff,r_ce`.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airlink::PilotBook;
use crate::metrics::{effective_rate_consumed, pilot_cost};
use crate::rng::{purpose, stream_rng, PURPOSE_STRIDE};
use crate::scenario::{generate_channels, generate_topology, ScenarioConfig};
use crate::solver::centralized::{run_centralized, CentralizedConfig, Objective};
use crate::solver::distributed::{run_bidirectional, BidirConfig, StepConfig};
use crate::solver::init_combiners;
use crate::types::{Algorithm, CsiMode};
use crate::{Error, Result};

/// Axis a sweep can vary. `iterations` is the implicit no-sweep axis: the
/// per-iteration rows already span it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    #[serde(rename = "iterations")]
    Iterations,
    #[serde(rename = "r_t")]
    Rt,
    #[serde(rename = "group_size")]
    GroupSize,
    #[serde(rename = "M")]
    M,
    #[serde(rename = "noise_dbm")]
    NoiseDbm,
    #[serde(rename = "rho_bs_dbm")]
    RhoBsDbm,
}

impl SweepVariable {
    pub fn label(self) -> &'static str {
        match self {
            SweepVariable::Iterations => "iterations",
            SweepVariable::Rt => "r_t",
            SweepVariable::GroupSize => "group_size",
            SweepVariable::M => "M",
            SweepVariable::NoiseDbm => "noise_dbm",
            SweepVariable::RhoBsDbm => "rho_bs_dbm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iterations" => Ok(SweepVariable::Iterations),
            "r_t" | "rt" => Ok(SweepVariable::Rt),
            "group_size" => Ok(SweepVariable::GroupSize),
            "M" | "m" | "bs_antennas" => Ok(SweepVariable::M),
            "noise_dbm" => Ok(SweepVariable::NoiseDbm),
            "rho_bs_dbm" => Ok(SweepVariable::RhoBsDbm),
            other => Err(Error::InvalidConfig(format!("unknown sweep variable '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

/// Pilot sequence lengths overriding the minimum orthogonal book.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotLengths {
    pub ul_full: usize,
    pub ul_ue: usize,
    pub ul_group: usize,
    pub dl: usize,
}

/// Stopping and step parameters of the centralized solver, exposed at the
/// experiment level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralizedTuning {
    pub outer_max: usize,
    pub outer_rel_tol: f64,
    pub inner_max: usize,
    pub inner_tol: f64,
    pub zeta0: f64,
    pub eta0: f64,
}

impl Default for CentralizedTuning {
    fn default() -> Self {
        Self {
            outer_max: 200,
            outer_rel_tol: 1e-6,
            inner_max: 500,
            inner_tol: 1e-5,
            zeta0: 0.5,
            eta0: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub algorithms: Vec<Algorithm>,
    pub csi: CsiMode,
    pub iterations: usize,
    pub drops: usize,
    pub seed: u64,
    /// Resource block size r_t used for the effective rate.
    pub rt: f64,
    /// Per-UE MSE weights; all ones when absent.
    pub weights: Option<Vec<f64>>,
    pub sweep: Option<SweepSpec>,
    pub step: StepConfig,
    pub centralized: CentralizedTuning,
    pub pilot_lengths: Option<PilotLengths>,
    /// Persist per-drop series so aggregates can be recomputed.
    pub save_drops: bool,
    /// Worker threads for drop-level parallelism; default = all cores.
    pub workers: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentSpec {
    /// CI-friendly profile on the small grid.
    pub fn desk() -> Self {
        Self {
            scenario: ScenarioConfig::desk(),
            algorithms: Algorithm::ALL.to_vec(),
            csi: CsiMode::Estimated,
            iterations: 30,
            drops: 10,
            seed: 1,
            rt: 1000.0,
            weights: None,
            sweep: None,
            step: StepConfig::default(),
            centralized: CentralizedTuning::default(),
            pilot_lengths: None,
            save_drops: false,
            workers: None,
        }
    }

    /// Full-size profile; hours of compute at the published drop count.
    pub fn paper_scale() -> Self {
        Self {
            scenario: ScenarioConfig::paper_scale(),
            drops: 1000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("no algorithms selected".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.drops == 0 {
            return Err(Error::InvalidConfig("drops must be at least 1".into()));
        }
        if !(self.rt > 0.0) {
            return Err(Error::InvalidConfig("rt must be positive".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.scenario.ue_count {
                return Err(Error::InvalidConfig("one weight per UE".into()));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::InvalidConfig("sweep needs at least one value".into()));
            }
            match sweep.variable {
                SweepVariable::Iterations => {
                    if sweep.values != [self.iterations as f64] {
                        return Err(Error::InvalidConfig(
                            "an explicit iterations sweep must list exactly the configured \
                             iteration count; per-iteration rows already span that axis"
                                .into(),
                        ));
                    }
                }
                SweepVariable::Rt => {
                    if sweep.values.iter().any(|v| !(*v > 0.0)) {
                        return Err(Error::InvalidConfig("r_t values must be positive".into()));
                    }
                }
                variable => {
                    for &v in &sweep.values {
                        scenario_for(&self.scenario, variable, v)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn weights_vec(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.scenario.ue_count])
    }
}

/// Scenario with one swept field replaced.
fn scenario_for(base: &ScenarioConfig, variable: SweepVariable, value: f64) -> Result<ScenarioConfig> {
    let as_count = |what: &str| -> Result<usize> {
        if value.fract() == 0.0 && value >= 1.0 && value <= 1e9 {
            Ok(value as usize)
        } else {
            Err(Error::InvalidConfig(format!("{what} sweep value {value} is not a positive integer")))
        }
    };
    let mut cfg = base.clone();
    match variable {
        SweepVariable::Iterations | SweepVariable::Rt => {
            return Err(Error::InvalidConfig("not a scenario axis".into()));
        }
        SweepVariable::GroupSize => {
            let size = as_count("group_size")?;
            if base.ue_count % size != 0 {
                return Err(Error::InvalidConfig(format!(
                    "group size {size} does not divide {} UEs",
                    base.ue_count
                )));
            }
            cfg.group_sizes = vec![size; base.ue_count / size];
        }
        SweepVariable::M => cfg.bs_antennas = as_count("M")?,
        SweepVariable::NoiseDbm => {
            cfg.noise_bs_dbm = value;
            cfg.noise_ue_dbm = value;
        }
        SweepVariable::RhoBsDbm => cfg.rho_bs_dbm = value,
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterPoint {
    pub iteration: usize,
    pub mean_r: f64,
    pub se_r: f64,
    pub mean_reff: f64,
    pub se_reff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub algorithm: Algorithm,
    pub csi: CsiMode,
    pub sweep_var: String,
    pub sweep_value: f64,
    /// Training symbols per iteration, or the upfront total for the
    /// centralized designs.
    pub r_ce: f64,
    pub points: Vec<IterPoint>,
}

/// One algorithm's raw per-iteration series in one drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub drop: usize,
    pub algorithm: Algorithm,
    pub csi: CsiMode,
    pub sweep_var: String,
    pub sweep_value: f64,
    pub r: Vec<f64>,
    pub reff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub spec: ExperimentSpec,
    /// Base RNG stream index of each drop (purpose offsets are added).
    pub per_drop_streams: Vec<u64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub meta: RunMeta,
    pub series: Vec<SeriesRecord>,
    pub drops: Option<Vec<DropRecord>>,
}

/// Raw per-iteration outcome of one algorithm in one drop.
struct DropData {
    r: Vec<f64>,
    consumed: Vec<f64>,
    warnings: usize,
}

fn make_book(cfg: &ScenarioConfig, lengths: Option<PilotLengths>) -> Result<PilotBook> {
    let g = cfg.group_count();
    match lengths {
        None => PilotBook::orthogonal(cfg.ue_count, cfg.ue_antennas, g),
        Some(l) => PilotBook::with_lengths(
            cfg.ue_count,
            cfg.ue_antennas,
            g,
            l.ul_full,
            l.ul_ue,
            l.ul_group,
            l.dl,
        ),
    }
}

fn run_drop(
    spec: &ExperimentSpec,
    cfg: &ScenarioConfig,
    book: &PilotBook,
    weights: &[f64],
    drop: usize,
) -> Result<Vec<DropData>> {
    let d = drop as u64;
    let topo = generate_topology(cfg, &mut stream_rng(spec.seed, d, purpose::TOPOLOGY))?;
    let ch = generate_channels(cfg, &topo, &mut stream_rng(spec.seed, d, purpose::CHANNELS))?;
    let init = init_combiners(
        cfg.ue_count,
        cfg.ue_antennas,
        &mut stream_rng(spec.seed, d, purpose::INIT_COMBINERS),
    );
    let iters = spec.iterations;

    spec.algorithms
        .iter()
        .map(|&algo| {
            let mut rng = stream_rng(spec.seed, d, purpose::NOISE_BASE + algo.stream_id());
            if algo.is_centralized() {
                let objective = match algo {
                    Algorithm::Centralized => Objective::SumMse,
                    _ => Objective::SumGroupMse,
                };
                let mut c = CentralizedConfig::new(
                    objective,
                    cfg.ue_count,
                    cfg.rho_bs_w(),
                    cfg.noise_ue_w(),
                );
                c.weights = weights.to_vec();
                c.rho_ue_w = cfg.rho_ue_w();
                c.sigma2_bs_w = cfg.noise_bs_w();
                c.outer_max = spec.centralized.outer_max;
                c.outer_rel_tol = spec.centralized.outer_rel_tol;
                c.inner_max = spec.centralized.inner_max;
                c.inner_tol = spec.centralized.inner_tol;
                c.zeta0 = spec.centralized.zeta0;
                c.eta0 = spec.centralized.eta0;
                let run = run_centralized(&ch, &topo.grouping, book, &c, spec.csi, &init, &mut rng)?;
                // The outer loop may stop early; hold the last value so the
                // iteration axis is uniform across drops and algorithms.
                let len = run.trace.len();
                let at = |i: usize| i.min(len) - 1;
                Ok(DropData {
                    r: (1..=iters).map(|i| run.trace.sum_rate[at(i)]).collect(),
                    consumed: (1..=iters).map(|i| run.trace.pilots_consumed[at(i)]).collect(),
                    warnings: run.warnings.len(),
                })
            } else {
                let mut c = BidirConfig::new(
                    cfg.ue_count,
                    cfg.rho_bs_w(),
                    cfg.rho_ue_w(),
                    cfg.noise_bs_w(),
                    cfg.noise_ue_w(),
                );
                c.iterations = iters;
                c.weights = weights.to_vec();
                c.step = spec.step;
                let run =
                    run_bidirectional(algo, &ch, &topo.grouping, book, &c, spec.csi, &init, &mut rng)?;
                Ok(DropData {
                    r: run.trace.sum_rate.clone(),
                    consumed: run.trace.pilots_consumed.clone(),
                    warnings: run.warnings.len(),
                })
            }
        })
        .collect()
}

/// Per-(algorithm, drop) data for one scenario; drops that aborted are
/// excluded with a warning.
struct BatchData {
    /// `[algo][included drop] -> DropData`; drop indices in `drop_ids`.
    data: Vec<Vec<DropData>>,
    drop_ids: Vec<usize>,
    r_ce: Vec<f64>,
    warnings: Vec<String>,
}

fn run_batch(spec: &ExperimentSpec, cfg: &ScenarioConfig) -> Result<BatchData> {
    let book = make_book(cfg, spec.pilot_lengths)?;
    let weights = spec.weights_vec();
    let outcomes: Vec<std::result::Result<Vec<DropData>, String>> = (0..spec.drops)
        .into_par_iter()
        .map(|d| run_drop(spec, cfg, &book, &weights, d).map_err(|e| format!("drop {d}: {e}")))
        .collect();

    let mut warnings = Vec::new();
    let mut drop_ids = Vec::new();
    let mut per_drop: Vec<Vec<DropData>> = Vec::new();
    for (d, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(data) => {
                for (a, dd) in data.iter().enumerate() {
                    if dd.warnings > 0 {
                        warnings.push(format!(
                            "drop {d}: {} produced {} solver warnings",
                            spec.algorithms[a], dd.warnings
                        ));
                    }
                }
                drop_ids.push(d);
                per_drop.push(data);
            }
            Err(msg) => warnings.push(format!("excluded {msg}")),
        }
    }
    if drop_ids.is_empty() {
        return Err(Error::Numerical("every drop aborted; nothing to aggregate".into()));
    }

    // Transpose to algorithm-major for aggregation.
    let mut data: Vec<Vec<DropData>> = spec.algorithms.iter().map(|_| Vec::new()).collect();
    for drop_data in per_drop {
        for (a, dd) in drop_data.into_iter().enumerate() {
            data[a].push(dd);
        }
    }
    let r_ce = spec
        .algorithms
        .iter()
        .map(|&algo| {
            let cost = pilot_cost(algo, &book);
            if algo.is_centralized() {
                cost.upfront
            } else {
                cost.per_iteration
            }
        })
        .collect();
    Ok(BatchData { data, drop_ids, r_ce, warnings })
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn series_from_batch(
    spec: &ExperimentSpec,
    batch: &BatchData,
    sweep_var: &str,
    sweep_value: f64,
    rt: f64,
    series: &mut Vec<SeriesRecord>,
    drops: &mut Option<Vec<DropRecord>>,
) {
    for (a, &algo) in spec.algorithms.iter().enumerate() {
        let runs = &batch.data[a];
        let points = (0..spec.iterations)
            .map(|i| {
                let r: Vec<f64> = runs.iter().map(|dd| dd.r[i]).collect();
                let reff: Vec<f64> = runs
                    .iter()
                    .map(|dd| effective_rate_consumed(dd.r[i], dd.consumed[i], rt))
                    .collect();
                let (mean_r, se_r) = mean_se(&r);
                let (mean_reff, se_reff) = mean_se(&reff);
                IterPoint { iteration: i + 1, mean_r, se_r, mean_reff, se_reff }
            })
            .collect();
        series.push(SeriesRecord {
            algorithm: algo,
            csi: spec.csi,
            sweep_var: sweep_var.to_string(),
            sweep_value,
            r_ce: batch.r_ce[a],
            points,
        });
        if let Some(records) = drops {
            for (slot, dd) in runs.iter().enumerate() {
                records.push(DropRecord {
                    drop: batch.drop_ids[slot],
                    algorithm: algo,
                    csi: spec.csi,
                    sweep_var: sweep_var.to_string(),
                    sweep_value,
                    r: dd.r.clone(),
                    reff: dd
                        .r
                        .iter()
                        .zip(&dd.consumed)
                        .map(|(&r, &c)| effective_rate_consumed(r, c, rt))
                        .collect(),
                });
            }
        }
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunResult> {
    spec.validate()?;
    match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
            .install(|| run_experiment_inner(spec)),
        None => run_experiment_inner(spec),
    }
}

fn run_experiment_inner(spec: &ExperimentSpec) -> Result<RunResult> {
    let mut warnings = Vec::new();
    if spec.drops == 1 {
        warnings.push("single drop: standard errors are reported as zero".into());
    }
    let mut series = Vec::new();
    let mut drops = spec.save_drops.then(Vec::new);

    match &spec.sweep {
        None => {
            let batch = run_batch(spec, &spec.scenario)?;
            warnings.extend(batch.warnings.iter().cloned());
            series_from_batch(
                spec,
                &batch,
                SweepVariable::Iterations.label(),
                spec.iterations as f64,
                spec.rt,
                &mut series,
                &mut drops,
            );
        }
        Some(sweep) => match sweep.variable {
            SweepVariable::Iterations => {
                let batch = run_batch(spec, &spec.scenario)?;
                warnings.extend(batch.warnings.iter().cloned());
                series_from_batch(
                    spec,
                    &batch,
                    SweepVariable::Iterations.label(),
                    spec.iterations as f64,
                    spec.rt,
                    &mut series,
                    &mut drops,
                );
            }
            SweepVariable::Rt => {
                // One set of drops serves every r_t: only the overhead
                // discount differs.
                let batch = run_batch(spec, &spec.scenario)?;
                warnings.extend(batch.warnings.iter().cloned());
                for &rt in &sweep.values {
                    series_from_batch(
                        spec,
                        &batch,
                        SweepVariable::Rt.label(),
                        rt,
                        rt,
                        &mut series,
                        &mut drops,
                    );
                }
            }
            variable => {
                for &value in &sweep.values {
                    let cfg = scenario_for(&spec.scenario, variable, value)?;
                    let batch = run_batch(spec, &cfg)?;
                    warnings.extend(batch.warnings.iter().cloned());
                    series_from_batch(
                        spec,
                        &batch,
                        variable.label(),
                        value,
                        spec.rt,
                        &mut series,
                        &mut drops,
                    );
                }
            }
        },
    }

    Ok(RunResult {
        meta: RunMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
            per_drop_streams: (0..spec.drops as u64).map(|d| d * PURPOSE_STRIDE).collect(),
            warnings,
        },
        series,
        drops,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown format '{other}'"))),
        }
    }
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct CsvRow<'a> {
    algorithm: &'a str,
    csi_mode: &'a str,
    sweep_var: &'a str,
    sweep_value: f64,
    iteration: usize,
    mean_R: f64,
    se_R: f64,
    mean_Reff: f64,
    se_Reff: f64,
    r_ce: f64,
}

/// The flat CSV projection of a result (per-drop records are JSON-only).
pub fn to_csv_string(result: &RunResult) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for s in &result.series {
        for p in &s.points {
            wtr.serialize(CsvRow {
                algorithm: s.algorithm.label(),
                csi_mode: s.csi.label(),
                sweep_var: &s.sweep_var,
                sweep_value: s.sweep_value,
                iteration: p.iteration,
                mean_R: p.mean_r,
                se_R: p.se_r,
                mean_Reff: p.mean_reff,
                se_Reff: p.se_reff,
                r_ce: s.r_ce,
            })?;
        }
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn to_json_string(result: &RunResult) -> Result<String> {
    let mut s = serde_json::to_string_pretty(result)?;
    s.push('\n');
    Ok(s)
}

/// Writes the result to `path` in the requested format.
pub fn export_results(result: &RunResult, format: ExportFormat, path: &Path) -> Result<()> {
    let payload = match format {
        ExportFormat::Csv => to_csv_string(result)?,
        ExportFormat::Json => to_json_string(result)?,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(payload.as_bytes())?;
    Ok(())
}

/// Figure families; each maps a result onto one plot-ready table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureFamily {
    RateVsIter,
    EffrateVsIter,
    EffrateVsRt,
    EffrateVsGroupsize,
    EffrateVsM,
    LowSnr,
    MseObjective,
}

impl FigureFamily {
    pub const ALL: [FigureFamily; 7] = [
        FigureFamily::RateVsIter,
        FigureFamily::EffrateVsIter,
        FigureFamily::EffrateVsRt,
        FigureFamily::EffrateVsGroupsize,
        FigureFamily::EffrateVsM,
        FigureFamily::LowSnr,
        FigureFamily::MseObjective,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FigureFamily::RateVsIter => "rate_vs_iter",
            FigureFamily::EffrateVsIter => "effrate_vs_iter",
            FigureFamily::EffrateVsRt => "effrate_vs_rt",
            FigureFamily::EffrateVsGroupsize => "effrate_vs_groupsize",
            FigureFamily::EffrateVsM => "effrate_vs_M",
            FigureFamily::LowSnr => "lowsnr",
            FigureFamily::MseObjective => "mse_objective",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown figure family '{s}'")))
    }
}

/// Experiment spec preset that produces the axes `family` needs.
pub fn figure_family_spec(family: FigureFamily, base: &ExperimentSpec) -> ExperimentSpec {
    let mut spec = base.clone();
    match family {
        FigureFamily::RateVsIter | FigureFamily::EffrateVsIter => spec.sweep = None,
        FigureFamily::EffrateVsRt => {
            spec.sweep = Some(SweepSpec {
                variable: SweepVariable::Rt,
                values: vec![250.0, 500.0, 1000.0, 2000.0, 4000.0],
            });
        }
        FigureFamily::LowSnr => {
            spec.scenario.noise_bs_dbm = -75.0;
            spec.scenario.noise_ue_dbm = -75.0;
            spec.sweep = Some(SweepSpec {
                variable: SweepVariable::Rt,
                values: vec![250.0, 500.0, 1000.0, 2000.0, 4000.0],
            });
        }
        FigureFamily::EffrateVsGroupsize => {
            let k = spec.scenario.ue_count;
            let mut sizes = Vec::new();
            let mut s = 1;
            while s <= k {
                if k % s == 0 {
                    sizes.push(s as f64);
                }
                s *= 2;
            }
            spec.sweep = Some(SweepSpec { variable: SweepVariable::GroupSize, values: sizes });
        }
        FigureFamily::EffrateVsM => {
            spec.sweep = Some(SweepSpec {
                variable: SweepVariable::M,
                values: vec![2.0, 4.0, 8.0, 16.0],
            });
        }
        FigureFamily::MseObjective => {
            spec.algorithms =
                vec![Algorithm::Centralized, Algorithm::CentralizedSumGroup];
            spec.csi = CsiMode::Perfect;
            spec.sweep = Some(SweepSpec {
                variable: SweepVariable::RhoBsDbm,
                values: vec![10.0, 20.0, 30.0, 40.0],
            });
        }
    }
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigurePoint {
    pub x: f64,
    pub y: f64,
    pub se: f64,
    /// Marks the per-series maximum over iterations.
    pub is_max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureSeries {
    pub label: String,
    pub algorithm: Algorithm,
    pub csi: CsiMode,
    pub points: Vec<FigurePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureTable {
    pub family: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<FigureSeries>,
}

fn mark_max(points: &mut [FigurePoint]) {
    if let Some((best, _)) = points
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.y.total_cmp(&b.y))
        .map(|(i, p)| (i, p.y))
    {
        points[best].is_max = true;
    }
}

fn require_axis<'a>(result: &'a RunResult, axis: &str) -> Result<Vec<&'a SeriesRecord>> {
    let hit: Vec<&SeriesRecord> =
        result.series.iter().filter(|s| s.sweep_var == axis).collect();
    if hit.is_empty() {
        Err(Error::InvalidConfig(format!(
            "result has no '{axis}' axis; rerun with the matching sweep"
        )))
    } else {
        Ok(hit)
    }
}

/// Distinct algorithms in their order of first appearance.
fn algorithms_of(series: &[&SeriesRecord]) -> Vec<Algorithm> {
    let mut seen = Vec::new();
    for s in series {
        if !seen.contains(&s.algorithm) {
            seen.push(s.algorithm);
        }
    }
    seen
}

/// Projects a result onto one figure family's plot-ready table.
///
/// Iteration families emit one point per iteration with the maximum
/// marked; sweep families emit one point per sweep value holding the
/// max-over-iterations effective rate.
pub fn emit_figure_data(result: &RunResult, family: FigureFamily) -> Result<FigureTable> {
    let per_iteration = |effective: bool| -> Result<Vec<FigureSeries>> {
        let series = require_axis(result, SweepVariable::Iterations.label())?;
        Ok(series
            .iter()
            .map(|s| {
                let mut points: Vec<FigurePoint> = s
                    .points
                    .iter()
                    .map(|p| FigurePoint {
                        x: p.iteration as f64,
                        y: if effective { p.mean_reff } else { p.mean_r },
                        se: if effective { p.se_reff } else { p.se_r },
                        is_max: false,
                    })
                    .collect();
                mark_max(&mut points);
                FigureSeries {
                    label: s.algorithm.label().to_string(),
                    algorithm: s.algorithm,
                    csi: s.csi,
                    points,
                }
            })
            .collect())
    };

    let max_over_iters = |axis: &str| -> Result<Vec<FigureSeries>> {
        let series = require_axis(result, axis)?;
        Ok(algorithms_of(&series)
            .into_iter()
            .map(|algo| {
                let mut points = Vec::new();
                let mut csi = result.meta.spec.csi;
                for s in series.iter().filter(|s| s.algorithm == algo) {
                    csi = s.csi;
                    let best = s
                        .points
                        .iter()
                        .max_by(|a, b| a.mean_reff.total_cmp(&b.mean_reff))
                        .expect("series has at least one iteration");
                    points.push(FigurePoint {
                        x: s.sweep_value,
                        y: best.mean_reff,
                        se: best.se_reff,
                        is_max: true,
                    });
                }
                FigureSeries { label: algo.label().to_string(), algorithm: algo, csi, points }
            })
            .collect())
    };

    let (x_label, y_label, series) = match family {
        FigureFamily::RateVsIter => ("iteration", "mean sum-group rate", per_iteration(false)?),
        FigureFamily::EffrateVsIter => {
            ("iteration", "mean effective sum-group rate", per_iteration(true)?)
        }
        FigureFamily::EffrateVsRt | FigureFamily::LowSnr => (
            "r_t",
            "max-over-iterations mean effective sum-group rate",
            max_over_iters(SweepVariable::Rt.label())?,
        ),
        FigureFamily::EffrateVsGroupsize => (
            "group size",
            "max-over-iterations mean effective sum-group rate",
            max_over_iters(SweepVariable::GroupSize.label())?,
        ),
        FigureFamily::EffrateVsM => (
            "BS antennas",
            "max-over-iterations mean effective sum-group rate",
            max_over_iters(SweepVariable::M.label())?,
        ),
        FigureFamily::MseObjective => {
            let series = require_axis(result, SweepVariable::RhoBsDbm.label())?;
            let centralized: Vec<&&SeriesRecord> =
                series.iter().filter(|s| s.algorithm.is_centralized()).collect();
            if centralized.is_empty() {
                return Err(Error::InvalidConfig(
                    "mse_objective needs centralized runs over a rho_bs_dbm sweep".into(),
                ));
            }
            let built = centralized
                .iter()
                .map(|s| {
                    let mut points: Vec<FigurePoint> = s
                        .points
                        .iter()
                        .map(|p| FigurePoint {
                            x: p.iteration as f64,
                            y: p.mean_r,
                            se: p.se_r,
                            is_max: false,
                        })
                        .collect();
                    mark_max(&mut points);
                    FigureSeries {
                        label: format!("{} @ {} dBm", s.algorithm.label(), s.sweep_value),
                        algorithm: s.algorithm,
                        csi: s.csi,
                        points,
                    }
                })
                .collect();
            ("outer iteration", "mean sum-group rate", built)
        }
    };

    Ok(FigureTable {
        family: family.label().to_string(),
        x_label: x_label.to_string(),
        y_label: y_label.to_string(),
        series,
    })
}

/// Writes a figure table as CSV with columns
/// `series,algorithm,csi_mode,x,y,se,is_max`.
pub fn write_figure_csv(table: &FigureTable, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["series", "algorithm", "csi_mode", "x", "y", "se", "is_max"])?;
    for s in &table.series {
        for p in &s.points {
            wtr.write_record([
                s.label.as_str(),
                s.algorithm.label(),
                s.csi.label(),
                &format!("{}", p.x),
                &format!("{}", p.y),
                &format!("{}", p.se),
                if p.is_max { "true" } else { "false" },
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
