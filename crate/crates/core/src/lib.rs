//! Semidefinite tests of whether observed covariances are compatible with a
//! hypothesised bipartite latent causal structure, with certificates either way.
//!
//! The pipeline: a [`graph::BipartiteDag`] and a [`features::BlockCovariance`]
//! (built from a [`distributions::DiscreteDistribution`] and a feature map) go into
//! [`sdp::test_compatibility`], which returns either a verified decomposition
//! (realizable as an explicit model via [`realization::realize`]) or a verified
//! separating witness.

pub mod distributions;
pub mod error;
pub mod experiments;
pub mod families;
pub mod features;
pub mod graph;
pub mod inequalities;
pub mod linalg;
pub mod model;
pub mod realization;
pub mod rng;
pub mod sdp;

pub use error::{Error, Result};
