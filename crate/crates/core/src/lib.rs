//! Hierarchy-aware joint supervised contrastive learning for hierarchical
//! multi-label text classification.
//!
//! The crate covers the whole pipeline at desk scale: label taxonomies and
//! their path structure, the level-weighted label-set distance, a small
//! reverse-mode differentiation core, the label-aware attention model,
//! the contrastive and ranking losses, a trainer, and path/depth aware
//! evaluation metrics.

pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod eval;
pub mod fixtures;
pub mod losses;
pub mod metric;
pub mod model;
pub mod taxonomy;
pub mod tensor;
pub mod trainer;

pub use metric::{hamming, DistanceMode, MetricContext};
pub use taxonomy::{LabelVector, Taxonomy, TaxonomyError, ROOT};
pub use tensor::{Graph, NodeId, Tensor, TensorError};
