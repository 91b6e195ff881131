//! Instance-level retrieval with a reranking transformer.
//!
//! The pipeline is: exact k-NN over global descriptors ([`retrieval`]), then a
//! pairwise scorer rewrites the order of the top-K neighbors. Scorers are the
//! transformer in [`model`] (trained by [`trainer`]), geometric verification
//! and α-weighted query expansion from [`baselines`], or the part-id oracle
//! that ships with the synthetic generator in [`descriptor::synth`].
//! [`eval`] measures the result.

pub mod assignment;
pub mod baselines;
pub mod descriptor;
pub mod eval;
pub mod model;
pub mod retrieval;
pub mod trainer;

pub use descriptor::{DescriptorSpace, ImageRecord, LocalDescriptor};

pub use model::{ModelConfig, ModelParams};
pub use retrieval::{GlobalIndex, Method, Neighbor, NeighborList, RecordSet};
