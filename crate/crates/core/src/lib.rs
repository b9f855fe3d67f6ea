//! Process-knowledge-infused learning.
//!
//! A text classifier whose predictions come from walking an expert-authored
//! yes/no question tree. Each question is answered by comparing embedded text
//! fragments of a post with the embedded question through a similarity kernel
//! and a learned per-question threshold. The satisfied root-to-leaf path is the
//! explanation.
//!
//! The pipeline, bottom-up:
//!
//! - [`tree`]: the question tree, annotation paths, and leaf probabilities
//!   estimated from annotator agreement.
//! - [`text`]: sentence splitting, tokenizing and sliding-window fragments.
//! - [`embeddings`]: CBOW word vectors, the word-vector file format, and the
//!   zero-padded concatenated fragment representation.
//! - [`kernels`]: cosine, polynomial and Gaussian similarity.
//! - [`model`]: scoring, the relaxed training loss, Newton threshold training,
//!   prediction and explanations.
//! - [`baseline`]: shared-weight logistic regression over word positions.
//! - [`eval`]: metrics, synthetic data, the brute-force threshold oracle and the
//!   method comparison table.
//! - [`artifact`]: on-disk envelopes for trained models.

pub mod artifact;
pub mod baseline;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod model;
pub mod text;
pub mod tree;

pub use error::{Error, Result};

/// Tool version written into every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
