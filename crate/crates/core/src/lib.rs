//! Sense-aware semantic change detection with a learned Mahalanobis metric.
//!
//! The pipeline learns a metric from same/different-meaning word pairs with
//! information-theoretic metric learning, scores words by the average
//! pairwise learned distance between their occurrences in two corpora, and
//! analyzes which embedding dimensions carry the change signal.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod dimensions;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod itml;
mod linalg;
pub mod metric;
pub mod scoring;
pub mod store;
pub mod synthetic;

pub use data::{Constraint, ConstraintSet, GoldRatings, Label, TargetSpec};
pub use error::{Error, Result};
pub use metric::{Embedding, MahalanobisMatrix, MetricMode};
pub use store::{EmbeddingStore, ManifestRow};
