//! Shared complex-valued containers and the algorithm vocabulary.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type C64 = num_complex::Complex<f64>;
pub type CMat = nalgebra::DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;

/// Precoder designs the harness can run.
///
/// `Centralized` minimizes the weighted sum MSE; `CentralizedSumGroup`
/// minimizes the sum over groups of the worst-case (max) group-member MSE.
/// The rest are per-iteration designs trained over the air.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Algorithm {
    Centralized,
    CentralizedSumGroup,
    LocalMmse,
    LocalMf,
    Br,
    BrGs,
    Gb,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Centralized,
        Algorithm::CentralizedSumGroup,
        Algorithm::LocalMmse,
        Algorithm::LocalMf,
        Algorithm::Br,
        Algorithm::BrGs,
        Algorithm::Gb,
    ];

    /// Canonical label used in CLI flags and export files.
    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Centralized => "Centralized",
            Algorithm::CentralizedSumGroup => "CentralizedSumGroup",
            Algorithm::LocalMmse => "LocalMMSE",
            Algorithm::LocalMf => "LocalMF",
            Algorithm::Br => "BR",
            Algorithm::BrGs => "BR-GS",
            Algorithm::Gb => "GB",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match norm.as_str() {
            "centralized" | "centralizedsummse" => Algorithm::Centralized,
            "centralizedsumgroup" | "sumgroup" => Algorithm::CentralizedSumGroup,
            "localmmse" => Algorithm::LocalMmse,
            "localmf" => Algorithm::LocalMf,
            "br" => Algorithm::Br,
            "brgs" => Algorithm::BrGs,
            "gb" => Algorithm::Gb,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown algorithm '{s}' (expected one of {})",
                    Algorithm::ALL.map(|a| a.label()).join(", ")
                )))
            }
        })
    }

    /// Stable per-algorithm noise-stream slot.
    pub fn stream_id(&self) -> u64 {
        match self {
            Algorithm::Centralized => 0,
            Algorithm::CentralizedSumGroup => 1,
            Algorithm::LocalMmse => 2,
            Algorithm::LocalMf => 3,
            Algorithm::Br => 4,
            Algorithm::BrGs => 5,
            Algorithm::Gb => 6,
        }
    }

    pub fn is_centralized(&self) -> bool {
        matches!(self, Algorithm::Centralized | Algorithm::CentralizedSumGroup)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl TryFrom<String> for Algorithm {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Algorithm::parse(&s)
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.label().to_string()
    }
}

/// Channel knowledge assumed by a run: exact channels everywhere, or
/// estimates acquired through the pilot rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    Perfect,
    Estimated,
}

impl CsiMode {
    pub fn label(&self) -> &'static str {
        match self {
            CsiMode::Perfect => "perfect",
            CsiMode::Estimated => "estimated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "perfect" => Ok(CsiMode::Perfect),
            "estimated" | "pilot" => Ok(CsiMode::Estimated),
            other => Err(Error::InvalidConfig(format!(
                "unknown CSI mode '{other}' (expected 'perfect', 'pilot', or 'estimated')"
            ))),
        }
    }
}

impl std::fmt::Display for CsiMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-BS, per-group transmit precoders `w_{b,g} ∈ C^M`.
///
/// Aggregated network-wide precoders stack the per-BS blocks in BS order,
/// giving `w_g ∈ C^{BM}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    bs_count: usize,
    group_count: usize,
    antennas: usize,
    w: Vec<CVec>,
}

impl PrecoderSet {
    pub fn zeros(bs_count: usize, group_count: usize, antennas: usize) -> Self {
        let w = vec![CVec::zeros(antennas); bs_count * group_count];
        Self { bs_count, group_count, antennas, w }
    }

    /// Builds from aggregated vectors `w_g ∈ C^{BM}`, splitting per BS.
    pub fn from_aggregated(w_agg: &[CVec], bs_count: usize, antennas: usize) -> Result<Self> {
        let group_count = w_agg.len();
        let mut set = Self::zeros(bs_count, group_count, antennas);
        for (g, w) in w_agg.iter().enumerate() {
            if w.len() != bs_count * antennas {
                return Err(Error::InvalidConfig(format!(
                    "aggregated precoder length {} != B*M = {}",
                    w.len(),
                    bs_count * antennas
                )));
            }
            for b in 0..bs_count {
                set.set(b, g, w.rows(b * antennas, antennas).into_owned());
            }
        }
        Ok(set)
    }

    pub fn bs_count(&self) -> usize {
        self.bs_count
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn w(&self, b: usize, g: usize) -> &CVec {
        &self.w[b * self.group_count + g]
    }

    pub fn set(&mut self, b: usize, g: usize, w: CVec) {
        assert_eq!(w.len(), self.antennas);
        self.w[b * self.group_count + g] = w;
    }

    /// Precoders of BS `b` in group order.
    pub fn bs_row(&self, b: usize) -> &[CVec] {
        &self.w[b * self.group_count..(b + 1) * self.group_count]
    }

    pub fn set_bs_row(&mut self, b: usize, row: Vec<CVec>) {
        assert_eq!(row.len(), self.group_count);
        for (g, w) in row.into_iter().enumerate() {
            self.set(b, g, w);
        }
    }

    /// Aggregated `w_g ∈ C^{BM}` (BS blocks stacked in order).
    pub fn aggregated(&self, g: usize) -> CVec {
        let mut out = CVec::zeros(self.bs_count * self.antennas);
        for b in 0..self.bs_count {
            out.rows_mut(b * self.antennas, self.antennas)
                .copy_from(self.w(b, g));
        }
        out
    }

    pub fn aggregated_all(&self) -> Vec<CVec> {
        (0..self.group_count).map(|g| self.aggregated(g)).collect()
    }

    /// Transmit power spent by BS `b`: `Σ_g ‖w_{b,g}‖²`.
    pub fn bs_power(&self, b: usize) -> f64 {
        self.bs_row(b).iter().map(|w| w.norm_squared()).sum()
    }

    pub fn bs_powers(&self) -> Vec<f64> {
        (0..self.bs_count).map(|b| self.bs_power(b)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.w
            .iter()
            .all(|w| w.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

/// Per-UE receive combiners `v_k ∈ C^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerSet {
    pub v: Vec<CVec>,
}

impl CombinerSet {
    pub fn zeros(ue_count: usize, antennas: usize) -> Self {
        Self { v: vec![CVec::zeros(antennas); ue_count] }
    }

    pub fn ue_count(&self) -> usize {
        self.v.len()
    }

    pub fn is_finite(&self) -> bool {
        self.v
            .iter()
            .all(|v| v.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}
