//! Deployment geometry, large-scale fading, and channel generation.
//!
//! Base stations sit on a √B × √B square grid. Users drop uniformly over
//! the grid's bounding box expanded by half the BS spacing on every side,
//! and are partitioned into non-overlapping multicast groups by shuffling
//! UE indices and cutting consecutive blocks of the configured sizes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::cn_matrix;
use crate::types::{CMat, CVec, CombinerSet};
use crate::{Error, Result};

/// Log-distance path loss in dB: `offset - coeff · log10(d)` with the
/// defaults `-48 - 30 log10(d)` (d in meters).
pub const PATHLOSS_OFFSET_DB: f64 = -48.0;
pub const PATHLOSS_EXP_COEFF: f64 = 30.0;

/// BS–UE distances are floored at 1 m so the path loss stays bounded.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Static description of one simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Number of base stations `B`; must be a perfect square.
    pub bs_count: usize,
    /// Antennas per BS (`M`).
    pub bs_antennas: usize,
    /// Number of UEs (`K`).
    pub ue_count: usize,
    /// Antennas per UE (`N`).
    pub ue_antennas: usize,
    /// Multicast group sizes; must sum to `ue_count`.
    pub group_sizes: Vec<usize>,
    /// BS grid spacing in meters.
    #[serde(default = "default_spacing")]
    pub grid_spacing_m: f64,
    /// Per-BS downlink power budget.
    #[serde(default = "default_rho_bs")]
    pub rho_bs_dbm: f64,
    /// Per-UE uplink pilot power budget.
    #[serde(default = "default_rho_ue")]
    pub rho_ue_dbm: f64,
    /// Noise power at each BS antenna.
    #[serde(default = "default_noise")]
    pub noise_bs_dbm: f64,
    /// Noise power at each UE antenna.
    #[serde(default = "default_noise")]
    pub noise_ue_dbm: f64,
    #[serde(default = "default_pl_offset")]
    pub pathloss_offset_db: f64,
    #[serde(default = "default_pl_coeff")]
    pub pathloss_exp_coeff: f64,
}

fn default_spacing() -> f64 {
    100.0
}
fn default_rho_bs() -> f64 {
    30.0
}
fn default_rho_ue() -> f64 {
    20.0
}
fn default_noise() -> f64 {
    -95.0
}
fn default_pl_offset() -> f64 {
    PATHLOSS_OFFSET_DB
}
fn default_pl_coeff() -> f64 {
    PATHLOSS_EXP_COEFF
}

impl ScenarioConfig {
    /// Small profile sized for laptop-scale runs: 9 BSs with 4 antennas,
    /// 8 two-antenna UEs in 4 groups.
    pub fn desk() -> Self {
        Self {
            bs_count: 9,
            bs_antennas: 4,
            ue_count: 8,
            ue_antennas: 2,
            group_sizes: vec![2; 4],
            grid_spacing_m: default_spacing(),
            rho_bs_dbm: default_rho_bs(),
            rho_ue_dbm: default_rho_ue(),
            noise_bs_dbm: default_noise(),
            noise_ue_dbm: default_noise(),
            pathloss_offset_db: default_pl_offset(),
            pathloss_exp_coeff: default_pl_coeff(),
        }
    }

    /// Full-size profile: 25 BSs with 8 antennas, 32 two-antenna UEs in
    /// 8 groups of 4.
    pub fn paper_scale() -> Self {
        Self {
            bs_count: 25,
            bs_antennas: 8,
            ue_count: 32,
            ue_antennas: 2,
            group_sizes: vec![4; 8],
            ..Self::desk()
        }
    }

    pub fn group_count(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidConfig(m));
        if self.bs_count == 0 || self.bs_antennas == 0 || self.ue_count == 0 || self.ue_antennas == 0
        {
            return err("bs_count, bs_antennas, ue_count, ue_antennas must be >= 1".into());
        }
        let side = (self.bs_count as f64).sqrt().round() as usize;
        if side * side != self.bs_count {
            return err(format!("bs_count = {} is not a perfect square", self.bs_count));
        }
        if self.group_sizes.is_empty() || self.group_sizes.iter().any(|&s| s == 0) {
            return err("group_sizes must be non-empty with positive entries".into());
        }
        if self.group_sizes.iter().sum::<usize>() != self.ue_count {
            return err(format!(
                "group_sizes sum to {}, expected ue_count = {}",
                self.group_sizes.iter().sum::<usize>(),
                self.ue_count
            ));
        }
        if !(self.grid_spacing_m > 0.0) {
            return err("grid_spacing_m must be positive".into());
        }
        for (name, v) in [
            ("rho_bs_dbm", self.rho_bs_dbm),
            ("rho_ue_dbm", self.rho_ue_dbm),
            ("noise_bs_dbm", self.noise_bs_dbm),
            ("noise_ue_dbm", self.noise_ue_dbm),
            ("pathloss_offset_db", self.pathloss_offset_db),
            ("pathloss_exp_coeff", self.pathloss_exp_coeff),
        ] {
            if !v.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    pub fn rho_bs_w(&self) -> f64 {
        dbm_to_watt(self.rho_bs_dbm)
    }
    pub fn rho_ue_w(&self) -> f64 {
        dbm_to_watt(self.rho_ue_dbm)
    }
    pub fn noise_bs_w(&self) -> f64 {
        dbm_to_watt(self.noise_bs_dbm)
    }
    pub fn noise_ue_w(&self) -> f64 {
        dbm_to_watt(self.noise_ue_dbm)
    }

    /// Path loss in dB at distance `d_m` under this config's model.
    pub fn pathloss_db(&self, d_m: f64) -> Result<f64> {
        if !(d_m > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "distance must be positive, got {d_m}"
            )));
        }
        Ok(self.pathloss_offset_db - self.pathloss_exp_coeff * d_m.log10())
    }
}

/// Path loss in dB under the default model: `-48 - 30 log10(d)`.
pub fn pathloss_db(d_m: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "distance must be positive, got {d_m}"
        )));
    }
    Ok(PATHLOSS_OFFSET_DB - PATHLOSS_EXP_COEFF * d_m.log10())
}

/// dBm to linear watts: `10^((p - 30)/10)`.
pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Non-overlapping partition of UEs into multicast groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    /// Group index of each UE.
    pub of_ue: Vec<usize>,
    /// Member UEs of each group, ascending within a group.
    pub members: Vec<Vec<usize>>,
}

impl Grouping {
    pub fn new(of_ue: Vec<usize>, group_count: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); group_count];
        for (k, &g) in of_ue.iter().enumerate() {
            if g >= group_count {
                return Err(Error::InvalidConfig(format!(
                    "UE {k} assigned to group {g} >= group count {group_count}"
                )));
            }
            members[g].push(k);
        }
        if members.iter().any(|m| m.is_empty()) {
            return Err(Error::InvalidConfig("every group needs at least one UE".into()));
        }
        Ok(Self { of_ue, members })
    }

    pub fn group_count(&self) -> usize {
        self.members.len()
    }

    pub fn ue_count(&self) -> usize {
        self.of_ue.len()
    }
}

/// One realization of positions and group assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub bs_xy: Vec<[f64; 2]>,
    pub ue_xy: Vec<[f64; 2]>,
    pub grouping: Grouping,
    /// BS–UE distances in meters, floored at [`MIN_DISTANCE_M`]; indexed
    /// `b * ue_count + k`.
    pub distances_m: Vec<f64>,
}

impl Topology {
    pub fn distance(&self, b: usize, k: usize) -> f64 {
        self.distances_m[b * self.ue_xy.len() + k]
    }
}

/// Draws BS grid, UE positions, and group assignment.
///
/// Draw order is fixed (UE x/y pairs in UE order, then the group shuffle)
/// so a given RNG stream always yields the same topology.
pub fn generate_topology(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Result<Topology> {
    cfg.validate()?;
    let side = (cfg.bs_count as f64).sqrt().round() as usize;
    let s = cfg.grid_spacing_m;

    let bs_xy: Vec<[f64; 2]> = (0..cfg.bs_count)
        .map(|b| [(b % side) as f64 * s, (b / side) as f64 * s])
        .collect();

    let lo = -s / 2.0;
    let hi = (side - 1) as f64 * s + s / 2.0;
    let ue_xy: Vec<[f64; 2]> = (0..cfg.ue_count)
        .map(|_| {
            let x = rng.random_range(lo..hi);
            let y = rng.random_range(lo..hi);
            [x, y]
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.ue_count).collect();
    order.shuffle(rng);
    let mut of_ue = vec![0usize; cfg.ue_count];
    let mut cursor = 0;
    for (g, &size) in cfg.group_sizes.iter().enumerate() {
        for &k in &order[cursor..cursor + size] {
            of_ue[k] = g;
        }
        cursor += size;
    }

    let mut distances_m = Vec::with_capacity(cfg.bs_count * cfg.ue_count);
    for bs in &bs_xy {
        for ue in &ue_xy {
            let d = ((bs[0] - ue[0]).powi(2) + (bs[1] - ue[1]).powi(2)).sqrt();
            distances_m.push(d.max(MIN_DISTANCE_M));
        }
    }

    Ok(Topology {
        bs_xy,
        ue_xy,
        grouping: Grouping::new(of_ue, cfg.group_count())?,
        distances_m,
    })
}

/// Small-scale plus large-scale channels for one drop.
///
/// `H_{b,k} ∈ C^{M×N}` has i.i.d. CN(0, δ_{b,k}) entries with
/// `δ_{b,k}` the linear path gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    bs_count: usize,
    ue_count: usize,
    bs_antennas: usize,
    ue_antennas: usize,
    h: Vec<CMat>,
    /// Large-scale gains in dB, indexed `b * ue_count + k`.
    pub gains_db: Vec<f64>,
}

impl ChannelSet {
    /// Wraps externally built channel blocks (mainly for tests).
    pub fn from_blocks(h: Vec<CMat>, bs_count: usize, ue_count: usize) -> Result<Self> {
        if h.len() != bs_count * ue_count || h.is_empty() {
            return Err(Error::InvalidConfig("channel block count mismatch".into()));
        }
        let (m, n) = (h[0].nrows(), h[0].ncols());
        if h.iter().any(|x| x.nrows() != m || x.ncols() != n) {
            return Err(Error::InvalidConfig("inconsistent channel block shapes".into()));
        }
        Ok(Self {
            bs_count,
            ue_count,
            bs_antennas: m,
            ue_antennas: n,
            gains_db: vec![0.0; bs_count * ue_count],
            h,
        })
    }

    pub fn bs_count(&self) -> usize {
        self.bs_count
    }
    pub fn ue_count(&self) -> usize {
        self.ue_count
    }
    pub fn bs_antennas(&self) -> usize {
        self.bs_antennas
    }
    pub fn ue_antennas(&self) -> usize {
        self.ue_antennas
    }

    pub fn h(&self, b: usize, k: usize) -> &CMat {
        &self.h[b * self.ue_count + k]
    }

    /// Aggregated channel of UE `k`: BS blocks stacked into `C^{BM×N}`.
    pub fn aggregated(&self, k: usize) -> CMat {
        let m = self.bs_antennas;
        let mut out = CMat::zeros(self.bs_count * m, self.ue_antennas);
        for b in 0..self.bs_count {
            out.rows_mut(b * m, m).copy_from(self.h(b, k));
        }
        out
    }

    pub fn aggregated_all(&self) -> Vec<CMat> {
        (0..self.ue_count).map(|k| self.aggregated(k)).collect()
    }

    /// Effective uplink channels `e_{b,k} = H_{b,k} v_k`, flat `b*K + k`.
    pub fn effective(&self, v: &CombinerSet) -> Vec<CVec> {
        let mut out = Vec::with_capacity(self.bs_count * self.ue_count);
        for b in 0..self.bs_count {
            for k in 0..self.ue_count {
                out.push(self.h(b, k) * &v.v[k]);
            }
        }
        out
    }
}

/// Draws Rayleigh-faded channels with the topology's large-scale gains.
pub fn generate_channels(
    cfg: &ScenarioConfig,
    topo: &Topology,
    rng: &mut impl Rng,
) -> Result<ChannelSet> {
    cfg.validate()?;
    let mut h = Vec::with_capacity(cfg.bs_count * cfg.ue_count);
    let mut gains_db = Vec::with_capacity(cfg.bs_count * cfg.ue_count);
    for b in 0..cfg.bs_count {
        for k in 0..cfg.ue_count {
            let delta_db = cfg.pathloss_db(topo.distance(b, k))?;
            let delta = 10f64.powf(delta_db / 10.0);
            h.push(cn_matrix(rng, cfg.bs_antennas, cfg.ue_antennas, delta));
            gains_db.push(delta_db);
        }
    }
    Ok(ChannelSet {
        bs_count: cfg.bs_count,
        ue_count: cfg.ue_count,
        bs_antennas: cfg.bs_antennas,
        ue_antennas: cfg.ue_antennas,
        h,
        gains_db,
    })
}
