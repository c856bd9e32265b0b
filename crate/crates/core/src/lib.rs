//! Differentially private relative entropy coding (DP-REC) for federated learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`param`]: flat parameter vectors with named group partitions.
//! - [`data`] and [`model`]: synthetic datasets, non-i.i.d. partitioning and
//!   the two tiny model families trained locally by clients.
//! - [`rng`]: counter-based, stream-addressable Gaussian randomness shared by
//!   encoder and decoder.
//! - [`codec`]: clipping, importance weighting and index selection for
//!   client-to-server messages, plus the packed wire format.
//! - [`accountant`]: Rényi-divergence privacy accounting with subsampling
//!   amplification and the importance-sampling overhead term.
//! - [`sim`]: the round-based federation simulator with pluggable uplink
//!   mechanisms and downlink history compression.

pub mod accountant;
pub mod codec;
pub mod data;
pub mod error;
pub mod model;
pub mod param;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
