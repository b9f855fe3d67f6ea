//! Annotated examples and their JSON-lines files.
//!
//! An annotation file holds one record per (example, annotator):
//!
//! ```text
//! {"example_id": "p1", "annotator_id": "a1", "steps": [{"q": "1.2", "a": "yes"}], "label": "Ideation", "text": "..."}
//! ```
//!
//! `text` is optional per record but every example needs it at least once
//! before it can be used for training. The gold label of an example is the
//! most frequent annotator label, ties going to the label listed first in the
//! tree.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::HEADER_PREFIX;
use crate::tree::{AnnotationPath, PathStep, ProcessTree, TreeError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(
        "example {example:?}, annotator {annotator:?}: label {label:?} does not match path leaf label {leaf_label:?}"
    )]
    LabelMismatch {
        example: String,
        annotator: String,
        label: String,
        leaf_label: String,
    },
    #[error("example {0:?} has conflicting texts")]
    ConflictingText(String),
    #[error("example {0:?} has no text")]
    MissingText(String),
    #[error("no examples")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub example_id: String,
    pub annotator_id: String,
    pub steps: Vec<PathStep>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl AnnotationRecord {
    pub fn path(&self) -> AnnotationPath {
        AnnotationPath {
            example_id: self.example_id.clone(),
            annotator_id: self.annotator_id.clone(),
            steps: self.steps.clone(),
        }
    }
}

/// A post with its gold label and every annotator's canonical path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub id: String,
    pub text: String,
    pub gold_label: String,
    pub annotations: Vec<AnnotationPath>,
}

impl AnnotatedExample {
    /// One record per annotation, text attached to each.
    pub fn records(&self, tree: &ProcessTree) -> Result<Vec<AnnotationRecord>, TreeError> {
        self.annotations
            .iter()
            .map(|p| {
                let leaf = tree.walk(&tree.canonicalize_path(p)?)?;
                Ok(AnnotationRecord {
                    example_id: p.example_id.clone(),
                    annotator_id: p.annotator_id.clone(),
                    steps: p.steps.clone(),
                    label: tree.leaves()[leaf].label.clone(),
                    text: Some(self.text.clone()),
                })
            })
            .collect()
    }
}

/// A post to classify.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRecord {
    pub id: String,
    pub text: String,
}

/// Read JSON lines, skipping blank lines and a leading header line.
pub fn read_jsonl<T, R>(reader: R) -> Result<Vec<T>, DatasetError>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (i == 0 && line.starts_with(HEADER_PREFIX)) {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatasetError::Json { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn read_jsonl_file<T>(path: impl AsRef<Path>) -> Result<Vec<T>, DatasetError>
where
    T: for<'de> Deserialize<'de>,
{
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, header: Option<&str>, items: &[T]) -> io::Result<()> {
    if let Some(h) = header {
        writeln!(out, "{h}")?;
    }
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_jsonl_file<T: Serialize>(path: impl AsRef<Path>, header: Option<&str>, items: &[T]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_jsonl(&mut out, header, items)?;
    out.flush()
}

/// Group records by example, canonicalize paths and pick gold labels.
/// Examples keep the order of their first record.
pub fn group_records(records: &[AnnotationRecord], tree: &ProcessTree) -> Result<Vec<AnnotatedExample>, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        let group = groups.entry(r.example_id.as_str()).or_default();
        if group.is_empty() {
            order.push(&r.example_id);
        }
        group.push(r);
    }

    order
        .into_iter()
        .map(|id| {
            let group = &groups[id];
            let mut text: Option<&str> = None;
            let mut annotations = Vec::with_capacity(group.len());
            let mut votes = vec![0usize; tree.labels().len()];
            for r in group {
                if let Some(t) = r.text.as_deref() {
                    match text {
                        Some(prev) if prev != t => return Err(DatasetError::ConflictingText(id.to_string())),
                        _ => text = Some(t),
                    }
                }
                let path = tree.canonicalize_path(&r.path())?;
                let leaf_label = &tree.leaves()[tree.walk(&path)?].label;
                if leaf_label != &r.label {
                    return Err(DatasetError::LabelMismatch {
                        example: r.example_id.clone(),
                        annotator: r.annotator_id.clone(),
                        label: r.label.clone(),
                        leaf_label: leaf_label.clone(),
                    });
                }
                votes[tree.label_index(leaf_label).expect("leaf label registered")] += 1;
                annotations.push(path);
            }
            let best = votes.iter().copied().max().unwrap_or(0);
            let gold = votes.iter().position(|&v| v == best).expect("non-empty votes");
            Ok(AnnotatedExample {
                id: id.to_string(),
                text: text
                    .ok_or_else(|| DatasetError::MissingText(id.to_string()))?
                    .to_string(),
                gold_label: tree.labels()[gold].clone(),
                annotations,
            })
        })
        .collect()
}

pub fn load_examples(path: impl AsRef<Path>, tree: &ProcessTree) -> Result<Vec<AnnotatedExample>, DatasetError> {
    group_records(&read_jsonl_file(path)?, tree)
}

pub fn save_examples(
    path: impl AsRef<Path>,
    header: Option<&str>,
    examples: &[AnnotatedExample],
    tree: &ProcessTree,
) -> Result<(), DatasetError> {
    let mut records = Vec::new();
    for e in examples {
        records.extend(e.records(tree)?);
    }
    write_jsonl_file(path, header, &records)?;
    Ok(())
}

/// Every annotation path of every example.
pub fn all_paths(examples: &[AnnotatedExample]) -> Vec<AnnotationPath> {
    examples.iter().flat_map(|e| e.annotations.iter().cloned()).collect()
}
