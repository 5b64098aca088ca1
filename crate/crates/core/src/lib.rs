//! Shared-seed importance-sampling compression (KLMS) for federated learning.
//!
//! A client holding a distribution `q` and a server holding a reference
//! distribution `p` draw the same `K` samples from `p` using a shared seed.
//! The client picks one of them with probability proportional to `q/p` and
//! sends only its index, so the bitrate tracks `KL(q || p)` rather than the
//! entropy of `q`.
//!
//! Layout:
//! - [`rng`]: keyed counter-based streams shared by encoder and decoder.
//! - [`distributions`]: factorized distributions with sampling, log-mass and KL.
//! - [`codec`]: block partitioning, block encoder/decoder, wire format.
//! - [`methods`]: FedPM, QSGD, stochastic SignSGD and federated SGLD pieces.
//! - [`data`], [`model`]: datasets and small closed-form-gradient models.
//! - [`sim`]: the deterministic federated simulator.
//! - [`config`], [`toy`], [`drift`]: experiment descriptions, the Gaussian toy
//!   study and the drifting-KL block study.

#![allow(clippy::redundant_guards)]

pub mod codec;
pub mod config;
pub mod data;
pub mod distributions;
pub mod drift;
pub mod error;
pub mod methods;
pub mod model;
pub mod rng;
pub mod sim;
pub mod toy;

pub use codec::{
    aggregate_block_locations, decode_block, decode_update, deserialize, encode_block, encode_update,
    importance_weights, samples_per_block, serialize, should_update_partition, split_blocks_adaptive,
    split_blocks_fixed, BitCost, BlockPartition, CodecParams, EncodeOutput, EncodedUpdate, MessageHeader,
};
pub use distributions::ProductDistribution;
pub use error::{Error, Result};
pub use rng::{derive_stream, SampleStream, StreamKey};
