//! Pilot signaling: books, transmission rounds, and LS estimators.
//!
//! Five rounds cover everything the designs need. All uplink rounds share
//! one network-wide power normalizer β chosen so the strongest transmitter
//! meets its per-symbol budget exactly; every estimator is least-squares
//! and divides the correlator output by the pilot energy (and √β on the
//! uplink).
//!
//! * full uplink: antenna-specific pilots, estimates `H_{b,k}` at every BS;
//! * UE effective uplink: one pilot per UE, combiners applied at the UE,
//!   estimates `h_{b,k} = H_{b,k} v_k`;
//! * group effective uplink: one pilot per group, weighted superposition,
//!   estimates `f_{b,g} = Σ_{k∈K_g} ω_k H_{b,k} v_k`;
//! * downlink: precoded group pilots, estimates the effective downlink
//!   channels `g_{k,g}` at each UE;
//! * uplink echo: UEs amplify-and-forward the combined downlink block, so
//!   each BS estimates the network-wide cross term
//!   `ξ_{b,g} = Σ_k ω_k H_{b,k} v_k v_k^H (Σ_{b̄} H_{b̄,k}^H w_{b̄,g})`
//!   built from the precoders that produced the echoed block.
//!
//! Pilot books default to orthogonal DFT columns at the minimum lengths
//! (`KN`, `K`, `G`, `G` symbols); contamination is opt-in via explicit
//! pilot reuse maps.

use rand::Rng;

use crate::rng::complex_gaussian;
use crate::scenario::{ChannelSet, Grouping};
use crate::types::{C64, CMat, CVec, CombinerSet, PrecoderSet};
use crate::{Error, Result};

/// Unit-modulus DFT pilot matrix: `count` orthogonal columns of length
/// `tau`, entry `(t, j) = exp(i 2π j t / tau)`, so `P^H P = τ I`.
pub fn dft_pilots(tau: usize, count: usize) -> Result<CMat> {
    if tau == 0 {
        return Err(Error::InvalidConfig("pilot length must be >= 1".into()));
    }
    if count > tau {
        return Err(Error::InvalidConfig(format!(
            "{count} orthogonal pilots need at least {count} symbols, got {tau}"
        )));
    }
    Ok(CMat::from_fn(tau, count, |t, j| {
        let phase = 2.0 * std::f64::consts::PI * (j as f64) * (t as f64) / (tau as f64);
        C64::new(phase.cos(), phase.sin())
    }))
}

/// Pilot sequences for every round plus the reuse maps.
///
/// Reuse maps are identities by default (orthogonal operation); assigning
/// the same pilot index to two transmitters models contamination.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    ul_full: CMat,
    ul_ue: CMat,
    ul_group: CMat,
    dl: CMat,
    /// Pilot block of each UE in the full uplink round (block j spans
    /// columns `j*N .. (j+1)*N` of the book).
    pub ul_full_of_ue: Vec<usize>,
    /// Pilot column of each UE in the UE-effective round.
    pub ul_ue_of_ue: Vec<usize>,
    /// Pilot column of each group in the group-effective round.
    pub ul_group_of_group: Vec<usize>,
    /// Pilot column of each group in the downlink round.
    pub dl_of_group: Vec<usize>,
    ue_antennas: usize,
}

impl PilotBook {
    /// Orthogonal book at the minimum lengths `KN / K / G / G`.
    pub fn orthogonal(ue_count: usize, ue_antennas: usize, group_count: usize) -> Result<Self> {
        Self::with_lengths(
            ue_count,
            ue_antennas,
            group_count,
            ue_count * ue_antennas,
            ue_count,
            group_count,
            group_count,
        )
    }

    /// Orthogonal book with explicit (possibly enlarged) lengths.
    pub fn with_lengths(
        ue_count: usize,
        ue_antennas: usize,
        group_count: usize,
        tau_ul_full: usize,
        tau_ul_ue: usize,
        tau_ul_group: usize,
        tau_dl: usize,
    ) -> Result<Self> {
        if ue_count == 0 || ue_antennas == 0 || group_count == 0 {
            return Err(Error::InvalidConfig("empty pilot book".into()));
        }
        Ok(Self {
            ul_full: dft_pilots(tau_ul_full, ue_count * ue_antennas)?,
            ul_ue: dft_pilots(tau_ul_ue, ue_count)?,
            ul_group: dft_pilots(tau_ul_group, group_count)?,
            dl: dft_pilots(tau_dl, group_count)?,
            ul_full_of_ue: (0..ue_count).collect(),
            ul_ue_of_ue: (0..ue_count).collect(),
            ul_group_of_group: (0..group_count).collect(),
            dl_of_group: (0..group_count).collect(),
            ue_antennas,
        })
    }

    pub fn tau_ul_full(&self) -> usize {
        self.ul_full.nrows()
    }
    pub fn tau_ul_ue(&self) -> usize {
        self.ul_ue.nrows()
    }
    pub fn tau_ul_group(&self) -> usize {
        self.ul_group.nrows()
    }
    pub fn tau_dl(&self) -> usize {
        self.dl.nrows()
    }

    /// Antenna pilot block `P_k ∈ C^{τ×N}` of UE `k` in the full round.
    pub fn ul_full_block(&self, k: usize) -> CMat {
        let n = self.ue_antennas;
        self.ul_full
            .columns(self.ul_full_of_ue[k] * n, n)
            .into_owned()
    }

    pub fn ul_ue_pilot(&self, k: usize) -> CVec {
        self.ul_ue.column(self.ul_ue_of_ue[k]).into_owned()
    }

    pub fn ul_group_pilot(&self, g: usize) -> CVec {
        self.ul_group.column(self.ul_group_of_group[g]).into_owned()
    }

    pub fn dl_pilot(&self, g: usize) -> CVec {
        self.dl.column(self.dl_of_group[g]).into_owned()
    }

    /// Opt into contamination: UE `k` transmits pilot `map[k]` in the
    /// UE-effective round. Shared indices collide on purpose.
    pub fn set_ul_ue_map(&mut self, map: Vec<usize>) -> Result<()> {
        Self::check_map(&map, self.ul_ue_of_ue.len(), self.ul_ue.ncols())?;
        self.ul_ue_of_ue = map;
        Ok(())
    }

    pub fn set_ul_full_map(&mut self, map: Vec<usize>) -> Result<()> {
        let blocks = self.ul_full.ncols() / self.ue_antennas;
        Self::check_map(&map, self.ul_full_of_ue.len(), blocks)?;
        self.ul_full_of_ue = map;
        Ok(())
    }

    pub fn set_ul_group_map(&mut self, map: Vec<usize>) -> Result<()> {
        Self::check_map(&map, self.ul_group_of_group.len(), self.ul_group.ncols())?;
        self.ul_group_of_group = map;
        Ok(())
    }

    pub fn set_dl_map(&mut self, map: Vec<usize>) -> Result<()> {
        Self::check_map(&map, self.dl_of_group.len(), self.dl.ncols())?;
        self.dl_of_group = map;
        Ok(())
    }

    fn check_map(map: &[usize], expected_len: usize, capacity: usize) -> Result<()> {
        if map.len() != expected_len {
            return Err(Error::InvalidConfig(format!(
                "pilot map length {} != {}",
                map.len(),
                expected_len
            )));
        }
        if map.iter().any(|&j| j >= capacity) {
            return Err(Error::InvalidConfig(format!(
                "pilot index out of range (capacity {capacity})"
            )));
        }
        Ok(())
    }
}

/// Which round a received block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Round {
    UlFull,
    UlUeEffective,
    UlGroupEffective,
    Downlink,
    UlEcho,
}

/// One receiver's block for one round: `Y` plus the power normalizer the
/// transmitters applied (β = 1 on the downlink, where the precoders set
/// the power).
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBlock {
    pub round: Round,
    pub y: CMat,
    pub beta: f64,
}

/// Estimates produced by the rounds, bundled for consumers that want a
/// single carrier. Rounds fill only their own slot.
#[derive(Debug, Clone, Default)]
pub struct EstimateSet {
    /// `Ĥ_{b,k}` (M×N), flat `b*K + k`.
    pub h_full: Option<Vec<CMat>>,
    /// `ĥ_{b,k} = H v` (M), flat `b*K + k`.
    pub h_eff: Option<Vec<CVec>>,
    /// `f̂_{b,g}` (M), flat `b*G + g`.
    pub f_group: Option<Vec<CVec>>,
    /// `ĝ_{k}` (N×G) per UE.
    pub g_dl: Option<Vec<CMat>>,
    /// `ξ̂_{b,g}` (M), flat `b*G + g`.
    pub xi_echo: Option<Vec<CVec>>,
}

/// Network-wide uplink power normalizer: `β = ρ_UE / max_{k,t} ‖x_{k,t}‖²`
/// over the unscaled transmit blocks. Errors when every block is zero.
pub fn compute_beta(unscaled_blocks: &[CMat], rho_ue_w: f64) -> Result<f64> {
    if !(rho_ue_w > 0.0) {
        return Err(Error::InvalidConfig("rho_ue must be positive".into()));
    }
    let mut max_power = 0.0f64;
    for x in unscaled_blocks {
        for t in 0..x.ncols() {
            max_power = max_power.max(x.column(t).norm_squared());
        }
    }
    if max_power <= 0.0 {
        return Err(Error::DegenerateInput(
            "all transmit blocks are zero; power normalizer undefined".into(),
        ));
    }
    Ok(rho_ue_w / max_power)
}

fn add_noise(y: &mut CMat, noise_w: f64, rng: &mut impl Rng) {
    if noise_w > 0.0 {
        for z in y.iter_mut() {
            *z += complex_gaussian(rng, noise_w);
        }
    }
}

/// Full uplink round with antenna-specific pilots.
///
/// Every UE transmits its `τ×N` pilot block at per-symbol power ρ_UE,
/// giving `β = ρ_UE / N`; BS `b` receives
/// `Y_b = √β Σ_k H_{b,k} P_k^H + Z` and estimates
/// `Ĥ_{b,k} = Y_b P_k / (τ √β)`.
pub struct UlFullRound {
    pub blocks: Vec<PilotBlock>,
    /// `Ĥ_{b,k}`, flat `b*K + k`.
    pub h_hat: Vec<CMat>,
    pub beta: f64,
}

pub fn round_ul_full(
    ch: &ChannelSet,
    book: &PilotBook,
    rho_ue_w: f64,
    noise_bs_w: f64,
    rng: &mut impl Rng,
) -> Result<UlFullRound> {
    if !(rho_ue_w > 0.0) {
        return Err(Error::InvalidConfig("rho_ue must be positive".into()));
    }
    let (bcount, kcount) = (ch.bs_count(), ch.ue_count());
    let tau = book.tau_ul_full();
    // Unit-modulus rows of P_k^H put all N antennas at power 1 per symbol.
    let beta = rho_ue_w / ch.ue_antennas() as f64;
    let sqrt_beta = beta.sqrt();

    let pilot_blocks: Vec<CMat> = (0..kcount).map(|k| book.ul_full_block(k)).collect();
    let mut blocks = Vec::with_capacity(bcount);
    let mut h_hat = Vec::with_capacity(bcount * kcount);
    for b in 0..bcount {
        let mut y = CMat::zeros(ch.bs_antennas(), tau);
        for k in 0..kcount {
            y += ch.h(b, k) * pilot_blocks[k].adjoint() * C64::new(sqrt_beta, 0.0);
        }
        add_noise(&mut y, noise_bs_w, rng);
        for k in 0..kcount {
            let est = &y * &pilot_blocks[k] / C64::new(tau as f64 * sqrt_beta, 0.0);
            h_hat.push(est);
        }
        blocks.push(PilotBlock { round: Round::UlFull, y, beta });
    }
    Ok(UlFullRound { blocks, h_hat, beta })
}

/// UE-effective uplink round: UE `k` transmits `√β v_k p_k^H`, so BS `b`
/// estimates `ĥ_{b,k} = Y_b p_k / (τ √β) ≈ H_{b,k} v_k`.
pub struct UlUeRound {
    pub blocks: Vec<PilotBlock>,
    /// `ĥ_{b,k}`, flat `b*K + k`.
    pub h_eff: Vec<CVec>,
    pub beta: f64,
}

pub fn round_ul_ue(
    ch: &ChannelSet,
    combiners: &CombinerSet,
    book: &PilotBook,
    rho_ue_w: f64,
    noise_bs_w: f64,
    rng: &mut impl Rng,
) -> Result<UlUeRound> {
    let (bcount, kcount) = (ch.bs_count(), ch.ue_count());
    let tau = book.tau_ul_ue();
    let unscaled: Vec<CMat> = (0..kcount)
        .map(|k| &combiners.v[k] * book.ul_ue_pilot(k).adjoint())
        .collect();
    let beta = compute_beta(&unscaled, rho_ue_w)?;
    let sqrt_beta = beta.sqrt();

    let eff = ch.effective(combiners);
    let mut blocks = Vec::with_capacity(bcount);
    let mut h_eff = Vec::with_capacity(bcount * kcount);
    for b in 0..bcount {
        let mut y = CMat::zeros(ch.bs_antennas(), tau);
        for k in 0..kcount {
            let p = book.ul_ue_pilot(k);
            y += &eff[b * kcount + k] * p.adjoint() * C64::new(sqrt_beta, 0.0);
        }
        add_noise(&mut y, noise_bs_w, rng);
        for k in 0..kcount {
            let p = book.ul_ue_pilot(k);
            h_eff.push(&y * p / C64::new(tau as f64 * sqrt_beta, 0.0));
        }
        blocks.push(PilotBlock { round: Round::UlUeEffective, y, beta });
    }
    Ok(UlUeRound { blocks, h_eff, beta })
}

/// Group-effective uplink round: UE `k` transmits `√β ω_k v_k p_{g_k}^H`,
/// so BS `b` estimates the weighted group channel
/// `f̂_{b,g} = Y_b p_g / (τ √β) ≈ Σ_{k∈K_g} ω_k H_{b,k} v_k`.
pub struct UlGroupRound {
    pub blocks: Vec<PilotBlock>,
    /// `f̂_{b,g}`, flat `b*G + g`.
    pub f_hat: Vec<CVec>,
    pub beta: f64,
}

pub fn round_ul_group(
    ch: &ChannelSet,
    combiners: &CombinerSet,
    weights: &[f64],
    grouping: &Grouping,
    book: &PilotBook,
    rho_ue_w: f64,
    noise_bs_w: f64,
    rng: &mut impl Rng,
) -> Result<UlGroupRound> {
    let (bcount, kcount, gcount) = (ch.bs_count(), ch.ue_count(), grouping.group_count());
    let tau = book.tau_ul_group();
    let unscaled: Vec<CMat> = (0..kcount)
        .map(|k| {
            &combiners.v[k]
                * book.ul_group_pilot(grouping.of_ue[k]).adjoint()
                * C64::new(weights[k], 0.0)
        })
        .collect();
    let beta = compute_beta(&unscaled, rho_ue_w)?;
    let sqrt_beta = beta.sqrt();

    let eff = ch.effective(combiners);
    let mut blocks = Vec::with_capacity(bcount);
    let mut f_hat = Vec::with_capacity(bcount * gcount);
    for b in 0..bcount {
        let mut y = CMat::zeros(ch.bs_antennas(), tau);
        for k in 0..kcount {
            let p = book.ul_group_pilot(grouping.of_ue[k]);
            y += &eff[b * kcount + k] * p.adjoint() * C64::new(sqrt_beta * weights[k], 0.0);
        }
        add_noise(&mut y, noise_bs_w, rng);
        for g in 0..gcount {
            let p = book.ul_group_pilot(g);
            f_hat.push(&y * p / C64::new(tau as f64 * sqrt_beta, 0.0));
        }
        blocks.push(PilotBlock { round: Round::UlGroupEffective, y, beta });
    }
    Ok(UlGroupRound { blocks, f_hat, beta })
}

/// Downlink round: BS `b` transmits `Σ_g w_{b,g} p_g^H`; UE `k` receives
/// `Y_k = Σ_g g_{k,g} p_g^H + Z` with `g_{k,g} = Σ_b H_{b,k}^H w_{b,g}`
/// and estimates `ĝ_{k,g} = Y_k p_g / τ`. No UE-side scaling, so the
/// block-average per-BS power equals `Σ_g ‖w_{b,g}‖²`.
pub struct DlRound {
    /// One block per UE (`N×τ`).
    pub blocks: Vec<PilotBlock>,
    /// `ĝ_k ∈ C^{N×G}`, per UE, columns in group order.
    pub g_hat: Vec<CMat>,
}

pub fn round_downlink(
    ch: &ChannelSet,
    precoders: &PrecoderSet,
    book: &PilotBook,
    noise_ue_w: f64,
    rng: &mut impl Rng,
) -> Result<DlRound> {
    let (bcount, kcount, gcount) = (ch.bs_count(), ch.ue_count(), precoders.group_count());
    let tau = book.tau_dl();
    let mut blocks = Vec::with_capacity(kcount);
    let mut g_hat = Vec::with_capacity(kcount);
    for k in 0..kcount {
        let mut y = CMat::zeros(ch.ue_antennas(), tau);
        for g in 0..gcount {
            let mut gkg = CVec::zeros(ch.ue_antennas());
            for b in 0..bcount {
                gkg += ch.h(b, k).adjoint() * precoders.w(b, g);
            }
            y += gkg * book.dl_pilot(g).adjoint();
        }
        add_noise(&mut y, noise_ue_w, rng);
        let mut est = CMat::zeros(ch.ue_antennas(), gcount);
        for g in 0..gcount {
            let col = &y * book.dl_pilot(g) / C64::new(tau as f64, 0.0);
            est.set_column(g, &col);
        }
        g_hat.push(est);
        blocks.push(PilotBlock { round: Round::Downlink, y, beta: 1.0 });
    }
    Ok(DlRound { blocks, g_hat })
}

/// Uplink echo round: UE `k` amplifies and forwards its combined downlink
/// block as `√β ω_k v_k v_k^H Y_k`, so BS `b` estimates the network-wide
/// cross term of the precoders behind that block:
/// `ξ̂_{b,g} = Y_b p_g / (τ √β) ≈ Σ_k ω_k H_{b,k} v_k v_k^H g_{k,g}`.
pub struct UlEchoRound {
    pub blocks: Vec<PilotBlock>,
    /// `ξ̂_{b,g}`, flat `b*G + g`.
    pub xi_hat: Vec<CVec>,
    pub beta: f64,
}

pub fn round_ul_echo(
    ch: &ChannelSet,
    combiners: &CombinerSet,
    weights: &[f64],
    dl_blocks: &[PilotBlock],
    book: &PilotBook,
    rho_ue_w: f64,
    noise_bs_w: f64,
    rng: &mut impl Rng,
) -> Result<UlEchoRound> {
    let (bcount, kcount) = (ch.bs_count(), ch.ue_count());
    let gcount = book.dl_of_group.len();
    if dl_blocks.len() != kcount {
        return Err(Error::InvalidConfig(format!(
            "echo needs one downlink block per UE, got {}",
            dl_blocks.len()
        )));
    }
    let tau = book.tau_dl();
    let unscaled: Vec<CMat> = (0..kcount)
        .map(|k| {
            let v = &combiners.v[k];
            let filtered = v.adjoint() * &dl_blocks[k].y; // 1×τ
            (v * filtered) * C64::new(weights[k], 0.0)
        })
        .collect();
    let beta = compute_beta(&unscaled, rho_ue_w)?;
    let sqrt_beta = beta.sqrt();

    let mut blocks = Vec::with_capacity(bcount);
    let mut xi_hat = Vec::with_capacity(bcount * gcount);
    for b in 0..bcount {
        let mut y = CMat::zeros(ch.bs_antennas(), tau);
        for k in 0..kcount {
            y += ch.h(b, k) * &unscaled[k] * C64::new(sqrt_beta, 0.0);
        }
        add_noise(&mut y, noise_bs_w, rng);
        for g in 0..gcount {
            let p = book.dl_pilot(g);
            xi_hat.push(&y * p / C64::new(tau as f64 * sqrt_beta, 0.0));
        }
        blocks.push(PilotBlock { round: Round::UlEcho, y, beta });
    }
    Ok(UlEchoRound { blocks, xi_hat, beta })
}
