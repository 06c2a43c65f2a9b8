//! Local model poisoning attacks and defenses for Byzantine-robust
//! federated learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`vector`] and [`rng`]: flat parameter vectors, per-iteration local
//!   model sets and labelled deterministic random streams.
//! * [`data`]: IDX / CSV ingestion, synthetic blobs, non-IID partitioning
//!   and mini-batch sampling.
//! * [`models`]: multi-class logistic regression and a one-hidden-layer MLP
//!   with analytic gradients and local SGD.
//! * [`aggregation`]: mean, Krum, Bulyan, trimmed mean and coordinate-wise
//!   median.
//! * [`attacks`]: directed-deviation and deviation crafters for Krum,
//!   trimmed mean and median, plus Gaussian and label-flipping baselines.
//! * [`defenses`]: error-rate based (ERR), loss based (LFR) and union
//!   rejection of suspicious local models.
//! * [`harness`]: the federated training loop, experiment configuration and
//!   metrics output.

pub mod aggregation;
pub mod attacks;
pub mod data;
pub mod defenses;
mod error;
pub mod harness;
pub mod models;
pub mod rng;
pub mod vector;

pub use error::{DataError, Error, Result};
pub use rng::RngStream;
pub use vector::{euclidean_distance, signed_direction, LocalModelSet, ParameterVector};
