//! Demographic gap auditing for face verification.
//!
//! The crate works on precomputed artifacts: a manifest of labelled images,
//! a blob of face embeddings, binary hair masks and vendor attribute scores.
//! From those it derives hairstyle labels, genuine/impostor similarity
//! distributions per (race, gender) cohort, d-prime gaps between cohorts, a
//! hairstyle-balanced female/male subset and a resampling check on that
//! subset.
//!
//! Module map:
//!
//! * [`corpus`]: data model, manifest/blob/mask IO, vendor payload adapters.
//! * [`attributes`]: bald and facial-hair fusion rules, hair ratio, census.
//! * [`scoring`]: pair enumeration and streaming score distributions.
//! * [`gapstats`]: d-prime and before/after gap reports.
//! * [`balancer`]: mask IoU and greedy one-to-one female/male matching.
//! * [`bootstrap`]: seeded random subsets with matching counts.
//! * [`synthgen`]: synthetic corpora with planted hairstyle effects.
//! * [`pipeline`]: the end-to-end audit and its report bundle.

pub mod attributes;
pub mod balancer;
pub mod bootstrap;
pub mod config;
pub mod corpus;
pub mod error;
pub mod gapstats;
pub mod pipeline;
pub mod scoring;
pub mod synthgen;

pub use attributes::{AttributeLabels, FusionThresholds, Provenance, TailBounds, TailRegion};
pub use balancer::{BalancedSubset, ExclusionReason};
pub use bootstrap::{BootstrapReport, TargetCounts};
pub use config::RunConfig;
pub use corpus::{AttributeScores, Cohort, Corpus, EmbeddingMatrix, Gender, HairMask, ImageRecord, Race};
pub use error::Error;
pub use gapstats::GapReport;
pub use scoring::{PairKind, PairSpec, ScoreDistribution};

/// Tool identifier embedded in every emitted artifact.
pub const TOOL_VERSION: &str = concat!("gapaudit ", env!("CARGO_PKG_VERSION"));
