//! Rank the nodes of a directed interaction network by how likely they are to
//! belong to a sparse positive class.
//!
//! The crate bundles everything the ranking pipeline needs:
//!
//! * [`graph`]: CSR directed graphs plus feature and label tables.
//! * [`ndmath`]: dense matrices, layers with explicit backward passes, Adam,
//!   and a finite-difference gradient checker.
//! * [`node2vec`], [`line`], [`imgagn`]: three node embedders. `imgagn` is the
//!   adversarial embedder for imbalanced labels with a GraphSAGE encoder.
//! * [`trees`]: CART, random forests and second-order gradient boosting.
//! * [`pipeline`]: correlation pruning, feature assembly and the subsampled
//!   fold ensemble.
//! * [`eval`]: AUC, cross-validated grid search, Fisher's exact test,
//!   percentile overlaps and enrichment curves.
//! * [`synth`]: stochastic block model benchmark generator.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod imgagn;
pub mod line;
pub mod ndmath;
pub mod node2vec;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod textfmt;
pub mod trees;

pub use embedding::EmbeddingMatrix;
pub use error::{Error, Result};
pub use graph::{Direction, FeatureMatrix, Graph, LabelSet};
