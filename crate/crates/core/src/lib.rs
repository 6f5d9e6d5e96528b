//! Differentially private release of tabular data through individual-ranking
//! microaggregation.
//!
//! Each attribute is sorted on its own, cut into clusters of at least `k`
//! records, and replaced by its cluster centroid. The centroids then receive
//! calibrated noise: Laplace noise for numeric attributes, an exponential
//! mechanism over a taxonomy for categorical ones. Baselines and a utility
//! harness live alongside.

pub mod data;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod metrics;
pub mod microaggregation;
pub mod oracle;
pub mod seeding;
pub mod synth;
pub mod taxonomy;

pub use data::{
    AttributeKind, AttributeSchema, Column, Dataset, NeighborPair, ResolvedSchema, SchemaSpec,
    Value,
};
pub use error::{Error, Result};
pub use harness::{run_release, run_sweep, SweepReport, SweepSpec};
pub use mechanisms::{
    release, CandidateScope, MechanismConfig, Method, NoiseSharing, PrivacyBudget, Release,
};
pub use metrics::{MetricConfig, UtilityReport};
pub use taxonomy::{NodeId, Taxonomy, ValueCounts};
