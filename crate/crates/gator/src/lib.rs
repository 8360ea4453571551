//! Gator: structured channel pruning for convolutional networks.
//!
//! Channels are removed by training stochastic hard gates under an auxiliary
//! computational-cost loss. A channel-dependency hypergraph ties together the
//! input/output channel sets of convolutions that must be pruned jointly
//! (residual highways in particular), so the emitted network is always
//! shape-consistent. The crate contains:
//!
//! - [`ir`]: network description, validation, reference executor, exact
//!   FLOPs/parameter counters, weight container I/O
//! - [`hypergraph`]: channel-dependency hypergraph built by union-find
//! - [`cost`]: per-edge per-channel cost factors (memory / FLOPs / latency)
//!   and the normalized computational loss
//! - [`gating`]: logistic-noise hard gates with a sigmoid surrogate gradient
//! - [`train`]: reverse-mode differentiation, SGD with per-edge learning-rate
//!   adjustment, gating/fine-tune phases, iterative pruning, gamma calibration
//! - [`prune`]: plan extraction, weight slicing, empty-block collapse, reports
//! - [`data`]: IDX and synthetic datasets with normalization and augmentation
//! - [`profile`]: latency table measurement on the reference executor

pub mod cost;
pub mod data;
pub mod error;
pub mod gating;
pub mod hypergraph;
pub mod ir;
pub mod nn;
pub mod profile;
pub mod prune;
pub mod rng;
pub mod train;

pub use error::GatorError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GatorError>;
