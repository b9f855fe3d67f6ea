use thiserror::Error;

use crate::artifact::ArtifactError;
use crate::baseline::BaselineError;
use crate::dataset::DatasetError;
use crate::embeddings::EmbeddingError;
use crate::eval::EvalError;
use crate::kernels::KernelError;
use crate::model::ModelError;
use crate::text::TextError;
use crate::tree::TreeError;

/// Any error raised by the library, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pk_tree: {0}")]
    Tree(#[from] TreeError),
    #[error("text: {0}")]
    Text(#[from] TextError),
    #[error("embeddings: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("kernels: {0}")]
    Kernel(#[from] KernelError),
    #[error("pkil_model: {0}")]
    Model(#[from] ModelError),
    #[error("baseline: {0}")]
    Baseline(#[from] BaselineError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("artifact: {0}")]
    Artifact(#[from] ArtifactError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
