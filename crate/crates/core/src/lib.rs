//! Few-shot unsupervised continual learning.
//!
//! The pipeline turns an unlabeled image set into a stream of unbalanced
//! pseudo-labeled tasks (k-means over embeddings), meta-trains a
//! feature extractor with a single inner update on an attention-pooled
//! meta-example, and evaluates the frozen representation on a
//! class-incremental stream of novel classes.
//!
//! Module map:
//! - [`data_io`]: embeddings file format, image datasets, the synthetic glyph
//!   generator and the random-projection embedding baseline.
//! - [`tasks`]: k-means, task construction, augmentation and loss balancing.
//! - [`network`]: parameters, feature extractor, attention pooling, classifier, FiLM.
//! - [`meta`]: inner/outer updates and the meta-training loop.
//! - [`replay`]: reservoir sampling buffer.
//! - [`eval`]: meta-test protocol, experiments, reports.

pub mod data_io;
pub mod error;
pub mod eval;
pub mod meta;
pub mod network;
pub mod par;
pub mod replay;
pub mod rng;
pub mod selftest;
pub mod tasks;

pub use error::{Error, Result};
