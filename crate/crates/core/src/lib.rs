//! Multi-group multicast precoding for cell-free massive MIMO.
//!
//! A network of `B` multi-antenna base stations jointly serves `K`
//! multi-antenna users partitioned into `G` multicast groups, one shared
//! data stream per group. The crate simulates the whole loop: scenario
//! and channel generation, uplink/downlink pilot signaling, precoder and
//! combiner optimization (centralized, local, and bidirectionally trained
//! distributed designs), and rate/overhead accounting across Monte-Carlo
//! drops.
//!
//! Modules mirror the pipeline:
//!
//! * [`scenario`] — grid deployment, path loss, small-scale channels.
//! * [`airlink`] — pilot books, pilot rounds, least-squares estimators.
//! * [`solver`] — centralized, local, and distributed precoder designs.
//! * [`metrics`] — MSE, SINR, multicast rates, pilot-overhead accounting.
//! * [`harness`] — Monte-Carlo experiment runner and exporters.
//! * [`checks`] — self-contained invariant suites behind `mgmc check`.
//!
//! All powers are carried in linear watts internally; dBm appears only at
//! configuration boundaries. Every random quantity derives from a single
//! master seed through counter-based stream derivation, so any run is
//! reproducible bit-for-bit regardless of worker-thread count.

pub mod airlink;
pub mod checks;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use types::{Algorithm, C64, CMat, CVec, CombinerSet, CsiMode, PrecoderSet};
