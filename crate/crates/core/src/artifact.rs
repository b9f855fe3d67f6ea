//! On-disk model files.
//!
//! An artifact is a `#pkil` header line followed by one JSON document. Word
//! vectors are not embedded: the artifact records their path and SHA-256, and
//! loading fails if the file has changed.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::SharedWeightLogReg;
use crate::embeddings::{EmbeddingError, WordVectors, HEADER_PREFIX};
use crate::kernels::KernelSpec;
use crate::model::{ModelError, PkilModel, SoftConfig, Thresholds};
use crate::tree::{LeafProbabilities, ProcessTree, TreeDocument, TreeError};

pub const MODEL_FORMAT: &str = "pkil-model";
pub const BASELINE_FORMAT: &str = "pkil-baseline";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("expected a {expected:?} artifact, found {found:?}")]
    WrongFormat { expected: String, found: String },
    #[error("word-vector file {path} has sha256 {found}, artifact expects {expected}")]
    ChecksumMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String, ArtifactError> {
    let path = path.as_ref();
    Ok(sha256_hex(&fs::read(path).map_err(|source| io_err(path, source))?))
}

fn io_err(path: &Path, source: io::Error) -> ArtifactError {
    ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Header line: `#pkil version=<v> config=<hash>`.
pub fn header_line(config_hash: &str) -> String {
    format!("{HEADER_PREFIX} version={} config={config_hash}", crate::VERSION)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorRef {
    /// As given when the artifact was written.
    pub path: String,
    pub sha256: String,
}

impl VectorRef {
    pub fn new(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        let path = path.as_ref();
        Ok(VectorRef {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }

    /// Relative paths are tried against the working directory first, then
    /// against the artifact's own directory.
    fn resolve(&self, artifact: &Path) -> PathBuf {
        let p = PathBuf::from(&self.path);
        if p.is_relative() && !p.exists() {
            if let Some(dir) = artifact.parent() {
                let candidate = dir.join(&p);
                if candidate.exists() {
                    return candidate;
                }
            }
        }
        p
    }

    /// Verify the checksum and load the vectors.
    pub fn load(&self, artifact: &Path) -> Result<WordVectors, ArtifactError> {
        let path = self.resolve(artifact);
        let bytes = fs::read(&path).map_err(|source| io_err(&path, source))?;
        let found = sha256_hex(&bytes);
        if found != self.sha256 {
            return Err(ArtifactError::ChecksumMismatch {
                path: path.display().to_string(),
                expected: self.sha256.clone(),
                found,
            });
        }
        Ok(crate::embeddings::load_vectors(&bytes[..])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRef {
    pub max_tokens: usize,
    pub vectors: VectorRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub tool_version: String,
    pub config_hash: String,
    pub tree: TreeDocument,
    pub leaf_probabilities: LeafProbabilities,
    pub thresholds: Thresholds,
    pub kernel: KernelSpec,
    pub embedding: EmbeddingRef,
    pub fragment_window: usize,
    pub soft: SoftConfig,
}

impl ModelArtifact {
    pub fn new(model: &PkilModel, vectors: VectorRef, soft: SoftConfig, config_hash: &str) -> Self {
        ModelArtifact {
            format: MODEL_FORMAT.into(),
            tool_version: crate::VERSION.into(),
            config_hash: config_hash.into(),
            tree: model.tree().to_document(),
            leaf_probabilities: model.leaf_probs().clone(),
            thresholds: model.thresholds().clone(),
            kernel: *model.kernel(),
            embedding: EmbeddingRef {
                max_tokens: model.max_tokens(),
                vectors,
            },
            fragment_window: model.fragment_window(),
            soft,
        }
    }

    pub fn model(&self) -> Result<PkilModel, ArtifactError> {
        let tree = ProcessTree::from_document(self.tree.clone())?;
        Ok(PkilModel::new(
            tree,
            self.leaf_probabilities.clone(),
            self.thresholds.clone(),
            self.kernel,
            self.embedding.max_tokens,
            self.fragment_window,
        )?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
        write_envelope(path.as_ref(), &self.config_hash, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        let a: ModelArtifact = read_envelope(path.as_ref())?;
        check_format(MODEL_FORMAT, &a.format)?;
        Ok(a)
    }

    /// Model plus verified word vectors.
    pub fn load_model(path: impl AsRef<Path>) -> Result<(Self, PkilModel, WordVectors), ArtifactError> {
        let path = path.as_ref();
        let artifact = Self::load(path)?;
        let model = artifact.model()?;
        let vectors = artifact.embedding.vectors.load(path)?;
        Ok((artifact, model, vectors))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineArtifact {
    pub format: String,
    pub tool_version: String,
    pub config_hash: String,
    pub model: SharedWeightLogReg,
    pub vectors: VectorRef,
}

impl BaselineArtifact {
    pub fn new(model: SharedWeightLogReg, vectors: VectorRef, config_hash: &str) -> Self {
        BaselineArtifact {
            format: BASELINE_FORMAT.into(),
            tool_version: crate::VERSION.into(),
            config_hash: config_hash.into(),
            model,
            vectors,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ArtifactError> {
        write_envelope(path.as_ref(), &self.config_hash, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtifactError> {
        let a: BaselineArtifact = read_envelope(path.as_ref())?;
        check_format(BASELINE_FORMAT, &a.format)?;
        Ok(a)
    }
}

/// The `format` field of any artifact file.
pub fn peek_format(path: impl AsRef<Path>) -> Result<String, ArtifactError> {
    #[derive(Deserialize)]
    struct Probe {
        format: String,
    }
    Ok(read_envelope::<Probe>(path.as_ref())?.format)
}

fn check_format(expected: &str, found: &str) -> Result<(), ArtifactError> {
    if expected == found {
        Ok(())
    } else {
        Err(ArtifactError::WrongFormat {
            expected: expected.into(),
            found: found.into(),
        })
    }
}

fn write_envelope<T: Serialize>(path: &Path, config_hash: &str, value: &T) -> Result<(), ArtifactError> {
    let mut text = header_line(config_hash);
    text.push('\n');
    text.push_str(
        &serde_json::to_string_pretty(value).map_err(|source| ArtifactError::Json {
            path: path.display().to_string(),
            source,
        })?,
    );
    text.push('\n');
    fs::write(path, text).map_err(|source| io_err(path, source))
}

fn read_envelope<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    let body = match text.strip_prefix(HEADER_PREFIX) {
        Some(rest) => rest.split_once('\n').map_or("", |(_, b)| b),
        None => &text,
    };
    serde_json::from_str(body).map_err(|source| ArtifactError::Json {
        path: path.display().to_string(),
        source,
    })
}
