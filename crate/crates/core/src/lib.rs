//! Noncoherent signed over-the-air aggregation by paired resource-element
//! energy differences (REED).
//!
//! Each client splits a real value `u` into its positive and negative parts
//! and transmits them as energies on two orthogonal resource elements. The
//! server measures the two received energies and subtracts them, which gives
//! an unbiased estimate of the signed sum without instantaneous channel state.
//!
//! The crate is organised bottom-up:
//!
//! - [`channel`]: seeded stream keys and the fading / noise / dither samplers.
//! - [`phy`]: symbol mapping, superposition, energy-difference estimators and
//!   the ideal and coherent baseline aggregators.
//! - [`analytics`]: closed-form moments, aggregation-error bounds, the
//!   energy-feasible gain schedule and the stationarity bound.
//! - [`montecarlo`]: deterministic, chunked Monte Carlo moment estimation.
//! - [`data`]: IDX parsing, synthetic datasets and client partitioning.
//! - [`fedlearn`]: objectives, local SGD and the FedAvg round loop.

pub mod analytics;
pub mod channel;
pub mod data;
mod error;
pub mod fedlearn;
pub mod montecarlo;
pub mod phy;

pub use analytics::{ConvergenceConstants, MomentReport};
pub use channel::{Axis, Complex, Domain, StreamKey};
pub use data::{LabeledDataset, PartitionKind, PartitionSpec};
pub use error::{Error, Result};
pub use fedlearn::{Aggregator, FedRunConfig, FedRunOutput, Objective, RoundTrace, StepSize};
pub use montecarlo::{MomentPoint, SampleMoments};
pub use phy::{Branch, PairedEnergies, ReedPhyConfig, ScalarInputs};
