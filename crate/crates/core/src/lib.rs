//! Deterministic simulator for Byzantine-robust, communication-compressed
//! distributed stochastic learning.
//!
//! The crate implements Byz-EF21-SGDM (error feedback with Polyak momentum
//! and robust aggregation) next to the BR-CSGD baseline, together with the
//! robust aggregators, sparsifying compressors, Byzantine attacks, data
//! oracles and diagnostics needed to run and verify them.
//!
//! Module map:
//!
//! - [`compressors`]: Top-k / Rand-k sparsifiers and the [`SparseDelta`] wire form.
//! - [`aggregators`]: Avg, CWMed, CWTM, RFA, NNM pre-aggregation and the
//!   empirical `(f, kappa)` certifier.
//! - [`data`]: LIBSVM ingestion, partitioning, logistic loss oracles and
//!   synthetic problems.
//! - [`protocol`]: honest worker and server state machines.
//! - [`adversary`]: SF, LF, IPM and ALIE message generation.
//! - [`engine`]: run configuration, the round loop, diagnostics, the
//!   step-size calculator and experiment matrices.

pub mod adversary;
mod auto;
pub mod aggregators;
pub mod compressors;
pub mod data;
pub mod engine;
mod error;
pub mod linalg;
pub mod protocol;
pub mod rng;

pub use auto::AutoOr;
pub use compressors::{CompressorKind, CompressorSpec, SparseDelta};
pub use error::{Error, Result};

/// Dense real vector used for models, gradients and momentum buffers.
pub type DenseVector = Vec<f64>;
