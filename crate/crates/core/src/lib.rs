//! Unsupervised random forests with a Fixation-Index split rule.
//!
//! Forests are grown without labels, samples are compared through how
//! often they share leaves, and the resulting distances are clustered
//! with Ward linkage. Several omics layers can be fused by summing their
//! leaf co-occurrence counts, and forests can be shared between sites
//! without exchanging any sample data.

pub mod affinity;
pub mod bench;
pub mod cli;
pub mod cluster;
pub mod data;
pub mod error;
pub mod federated;
pub mod forest;
pub mod importance;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
