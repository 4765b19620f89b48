//! Training and verification engine for sequential recommendation with
//! time-dependent soft labels, enduring hard negatives, and
//! hard-negative-upweighted contrastive learning.
//!
//! The crate is `no_std`-compatible (requires `alloc`): everything here is
//! pure computation over in-memory data. File IO, the CLI, and on-disk
//! formats live in the companion `fenrec-cli` crate.
//!
//! Module map:
//! - [`data`]: interaction parsing, leave-one-out splits, subsequence
//!   enumeration with future-item windows
//! - [`graph`]: dense-tensor reverse-mode differentiation with a
//!   stop-gradient marker
//! - [`encoder`]: a single-block causal self-attention sequence encoder
//! - [`softlabel`]: time-dependent soft labels and the revised
//!   cross-entropy
//! - [`negatives`]: enduring hard-negative synthesis and per-anchor
//!   negative sets
//! - [`loss`]: InfoNCE, mixed-negative, and hard-negative-upweighted
//!   contrastive objectives
//! - [`train`]: epoch loop, warm-up schedule, Adam, early stopping
//! - [`metrics`]: full-ranking HR@K / NDCG@K, uniformity, similarity
//!   histograms
//! - [`synth`]: seeded cluster-structured synthetic datasets

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod negatives;
pub mod optim;
pub mod rng;
pub mod softlabel;
pub mod synth;
pub mod tensor;
pub mod train;

pub(crate) mod math;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Norm guard used by every normalization in the crate.
pub const NORM_EPSILON: f64 = 1e-12;
