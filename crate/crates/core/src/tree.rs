//! The process-knowledge question tree.
//!
//! A tree is a set of main questions, each with a `yes` and a `no` edge to
//! either another question or a labeled leaf. Sub-questions (for example `1.2`
//! under main question `1`) are declared in the document with a `parent_id` and
//! carry no edges of their own; annotation paths that mention them are folded
//! onto their main question before use.
//!
//! Leaf probabilities come from annotator agreement: for every example, the
//! fraction of its annotators whose path ends at a leaf, averaged over the
//! examples that reached that leaf at least once.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid tree document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("empty id in tree document")]
    EmptyId,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("leaf {0:?} has an empty label")]
    EmptyLabel(String),
    #[error("question {id:?} is missing its {edge} edge")]
    MissingEdge { id: String, edge: &'static str },
    #[error("sub-question {0:?} must not carry yes/no edges")]
    SubQuestionEdges(String),
    #[error("sub-question {id:?} names unknown main question {parent:?}")]
    UnknownParent { id: String, parent: String },
    #[error("dangling edge from {from:?} to missing node {target:?}")]
    DanglingEdge { from: String, target: String },
    #[error("cycle detected at node {0:?}")]
    Cycle(String),
    #[error("node {0:?} is reachable through more than one edge")]
    SharedNode(String),
    #[error("node {0:?} is unreachable from the root")]
    Unreachable(String),
    #[error("unknown question id {0:?}")]
    UnknownQuestion(String),
    #[error("path of example {example:?} by annotator {annotator:?} does not trace the tree: {reason}")]
    InvalidPath {
        example: String,
        annotator: String,
        reason: String,
    },
    #[error("empty annotation set")]
    EmptyAnnotations,
}

/// Target of a question edge, serialized as `{"question": id}` or `{"leaf": id}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRef {
    Question(String),
    Leaf(String),
}

impl NodeRef {
    pub fn id(&self) -> &str {
        match self {
            NodeRef::Question(id) | NodeRef::Leaf(id) => id,
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Question(id) => write!(f, "question {id}"),
            NodeRef::Leaf(id) => write!(f, "leaf {id}"),
        }
    }
}

/// The answer to a question, which is also the direction of its threshold test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    /// `+1` for yes, `-1` for no.
    pub fn sign(self) -> f64 {
        match self {
            Answer::Yes => 1.0,
            Answer::No => -1.0,
        }
    }

    pub fn flip(self) -> Answer {
        match self {
            Answer::Yes => Answer::No,
            Answer::No => Answer::Yes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub yes: NodeRef,
    pub no: NodeRef,
}

impl Question {
    pub fn edge(&self, answer: Answer) -> &NodeRef {
        match answer {
            Answer::Yes => &self.yes,
            Answer::No => &self.no,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub id: String,
    pub parent_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leaf {
    pub id: String,
    pub label: String,
}

/// One question entry of the tree file. Main questions have `yes`/`no`,
/// sub-questions have `parent_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes: Option<NodeRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no: Option<NodeRef>,
}

/// Serialized form of a [`ProcessTree`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub root: NodeRef,
    pub questions: Vec<QuestionEntry>,
    pub leaves: Vec<Leaf>,
}

/// A validated question tree.
///
/// Questions and leaves keep document order; question indices are used
/// throughout the model as positions in threshold and evidence vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessTree {
    root: NodeRef,
    questions: Vec<Question>,
    question_index: HashMap<String, usize>,
    sub_questions: Vec<SubQuestion>,
    sub_parent: HashMap<String, usize>,
    leaves: Vec<Leaf>,
    leaf_index: HashMap<String, usize>,
    labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    #[serde(rename = "q")]
    pub question: String,
    #[serde(rename = "a")]
    pub answer: Answer,
}

impl PathStep {
    pub fn new(question: impl Into<String>, answer: Answer) -> Self {
        PathStep {
            question: question.into(),
            answer,
        }
    }
}

/// One annotator's walk through the tree for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationPath {
    pub example_id: String,
    pub annotator_id: String,
    pub steps: Vec<PathStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignedStep {
    pub question_id: String,
    pub question_index: usize,
    pub answer: Answer,
}

impl SignedStep {
    pub fn sign(&self) -> f64 {
        self.answer.sign()
    }
}

/// A root-to-leaf walk with the direction taken at every question.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedPath {
    pub steps: Vec<SignedStep>,
    pub leaf_id: String,
    pub leaf_index: usize,
    pub label: String,
    pub label_index: usize,
}

impl ProcessTree {
    pub fn parse(document: &str) -> Result<Self, TreeError> {
        let doc: TreeDocument = serde_json::from_str(document)?;
        Self::from_document(doc)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TreeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TreeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn from_document(doc: TreeDocument) -> Result<Self, TreeError> {
        let mut questions = Vec::new();
        let mut question_index = HashMap::new();
        let mut pending_subs = Vec::new();
        let mut seen = HashMap::new();

        for entry in doc.questions {
            if entry.id.is_empty() {
                return Err(TreeError::EmptyId);
            }
            if seen.insert(entry.id.clone(), ()).is_some() {
                return Err(TreeError::DuplicateId(entry.id));
            }
            match entry.parent_id {
                Some(parent_id) => {
                    if entry.yes.is_some() || entry.no.is_some() {
                        return Err(TreeError::SubQuestionEdges(entry.id));
                    }
                    pending_subs.push(SubQuestion {
                        id: entry.id,
                        parent_id,
                        text: entry.text,
                    });
                }
                None => {
                    let yes = entry.yes.ok_or_else(|| TreeError::MissingEdge {
                        id: entry.id.clone(),
                        edge: "yes",
                    })?;
                    let no = entry.no.ok_or_else(|| TreeError::MissingEdge {
                        id: entry.id.clone(),
                        edge: "no",
                    })?;
                    question_index.insert(entry.id.clone(), questions.len());
                    questions.push(Question {
                        id: entry.id,
                        text: entry.text,
                        yes,
                        no,
                    });
                }
            }
        }

        let mut sub_parent = HashMap::new();
        for sub in &pending_subs {
            let parent = question_index
                .get(&sub.parent_id)
                .copied()
                .ok_or_else(|| TreeError::UnknownParent {
                    id: sub.id.clone(),
                    parent: sub.parent_id.clone(),
                })?;
            sub_parent.insert(sub.id.clone(), parent);
        }

        let mut leaves = Vec::new();
        let mut leaf_index = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        for leaf in doc.leaves {
            if leaf.id.is_empty() {
                return Err(TreeError::EmptyId);
            }
            if leaf.label.trim().is_empty() {
                return Err(TreeError::EmptyLabel(leaf.id));
            }
            if leaf_index.insert(leaf.id.clone(), leaves.len()).is_some() {
                return Err(TreeError::DuplicateId(leaf.id));
            }
            if !labels.contains(&leaf.label) {
                labels.push(leaf.label.clone());
            }
            leaves.push(leaf);
        }

        let tree = ProcessTree {
            root: doc.root,
            questions,
            question_index,
            sub_questions: pending_subs,
            sub_parent,
            leaves,
            leaf_index,
            labels,
        };
        tree.check_structure()?;
        Ok(tree)
    }

    /// Edge resolution, cycles, sharing and reachability.
    fn check_structure(&self) -> Result<(), TreeError> {
        let resolve = |from: &str, node: &NodeRef| -> Result<(), TreeError> {
            let found = match node {
                NodeRef::Question(id) => self.question_index.contains_key(id),
                NodeRef::Leaf(id) => self.leaf_index.contains_key(id),
            };
            if found {
                Ok(())
            } else {
                Err(TreeError::DanglingEdge {
                    from: from.to_string(),
                    target: node.id().to_string(),
                })
            }
        };
        resolve("root", &self.root)?;
        for q in &self.questions {
            resolve(&q.id, &q.yes)?;
            resolve(&q.id, &q.no)?;
        }

        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Unseen,
            Open,
            Done,
        }
        let mut marks = vec![Mark::Unseen; self.questions.len()];
        let mut leaf_seen = vec![false; self.leaves.len()];

        // Iterative DFS; a question is Open while its subtree is being explored.
        let mut stack: Vec<(NodeRef, bool)> = vec![(self.root.clone(), false)];
        while let Some((node, exiting)) = stack.pop() {
            match node {
                NodeRef::Leaf(id) => {
                    let i = self.leaf_index[&id];
                    if leaf_seen[i] {
                        return Err(TreeError::SharedNode(id));
                    }
                    leaf_seen[i] = true;
                }
                NodeRef::Question(id) => {
                    let i = self.question_index[&id];
                    if exiting {
                        marks[i] = Mark::Done;
                        continue;
                    }
                    match marks[i] {
                        Mark::Open => return Err(TreeError::Cycle(id)),
                        Mark::Done => return Err(TreeError::SharedNode(id)),
                        Mark::Unseen => {}
                    }
                    marks[i] = Mark::Open;
                    let q = &self.questions[i];
                    stack.push((NodeRef::Question(id.clone()), true));
                    stack.push((q.no.clone(), false));
                    stack.push((q.yes.clone(), false));
                }
            }
        }

        if let Some(i) = marks.iter().position(|m| *m == Mark::Unseen) {
            return Err(TreeError::Unreachable(self.questions[i].id.clone()));
        }
        if let Some(i) = leaf_seen.iter().position(|s| !s) {
            return Err(TreeError::Unreachable(self.leaves[i].id.clone()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> TreeDocument {
        let mut questions: Vec<QuestionEntry> = self
            .questions
            .iter()
            .map(|q| QuestionEntry {
                id: q.id.clone(),
                parent_id: None,
                text: q.text.clone(),
                yes: Some(q.yes.clone()),
                no: Some(q.no.clone()),
            })
            .collect();
        questions.extend(self.sub_questions.iter().map(|s| QuestionEntry {
            id: s.id.clone(),
            parent_id: Some(s.parent_id.clone()),
            text: s.text.clone(),
            yes: None,
            no: None,
        }));
        TreeDocument {
            root: self.root.clone(),
            questions,
            leaves: self.leaves.clone(),
        }
    }

    pub fn root(&self) -> &NodeRef {
        &self.root
    }

    /// Number of main questions.
    pub fn num_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn sub_questions(&self) -> &[SubQuestion] {
        &self.sub_questions
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    /// Distinct leaf labels in order of first appearance.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.question_index.get(id).copied()
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.question_index(id).map(|i| &self.questions[i])
    }

    pub fn leaf_index(&self, id: &str) -> Option<usize> {
        self.leaf_index.get(id).copied()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Main-question index for a main or sub-question id.
    pub fn canonical_question(&self, id: &str) -> Option<usize> {
        self.question_index(id).or_else(|| self.sub_parent.get(id).copied())
    }

    /// Fold sub-question ids onto their main question and check the result is
    /// a root-to-leaf walk. Consecutive steps that collapse onto the same
    /// question with the same answer are merged.
    pub fn canonicalize_path(&self, path: &AnnotationPath) -> Result<AnnotationPath, TreeError> {
        let mut steps: Vec<PathStep> = Vec::with_capacity(path.steps.len());
        for step in &path.steps {
            let i = self
                .canonical_question(&step.question)
                .ok_or_else(|| TreeError::UnknownQuestion(step.question.clone()))?;
            let id = &self.questions[i].id;
            if let Some(last) = steps.last() {
                if &last.question == id && last.answer == step.answer {
                    continue;
                }
            }
            steps.push(PathStep::new(id.clone(), step.answer));
        }
        let canonical = AnnotationPath {
            example_id: path.example_id.clone(),
            annotator_id: path.annotator_id.clone(),
            steps,
        };
        self.walk(&canonical)?;
        Ok(canonical)
    }

    /// Follow a canonical path from the root and return the leaf it ends at.
    pub fn walk(&self, path: &AnnotationPath) -> Result<usize, TreeError> {
        let invalid = |reason: String| TreeError::InvalidPath {
            example: path.example_id.clone(),
            annotator: path.annotator_id.clone(),
            reason,
        };
        let mut node = &self.root;
        for step in &path.steps {
            match node {
                NodeRef::Leaf(id) => {
                    return Err(invalid(format!("step {:?} continues past leaf {id:?}", step.question)))
                }
                NodeRef::Question(id) => {
                    if *id != step.question {
                        return Err(invalid(format!("expected question {id:?}, found {:?}", step.question)));
                    }
                    node = self.questions[self.question_index[id]].edge(step.answer);
                }
            }
        }
        match node {
            NodeRef::Leaf(id) => Ok(self.leaf_index[id]),
            NodeRef::Question(id) => Err(invalid(format!("path stops at question {id:?}"))),
        }
    }

    /// The path from the root to every leaf, in leaf document order.
    pub fn enumerate_signed_paths(&self) -> Vec<SignedPath> {
        let mut out: Vec<Option<SignedPath>> = vec![None; self.leaves.len()];
        let mut stack: Vec<(NodeRef, Vec<SignedStep>)> = vec![(self.root.clone(), Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            match node {
                NodeRef::Leaf(id) => {
                    let leaf_index = self.leaf_index[&id];
                    let label = self.leaves[leaf_index].label.clone();
                    let label_index = self.label_index(&label).expect("leaf label registered");
                    out[leaf_index] = Some(SignedPath {
                        steps: prefix,
                        leaf_id: id,
                        leaf_index,
                        label,
                        label_index,
                    });
                }
                NodeRef::Question(id) => {
                    let question_index = self.question_index[&id];
                    let q = &self.questions[question_index];
                    for answer in [Answer::No, Answer::Yes] {
                        let mut steps = prefix.clone();
                        steps.push(SignedStep {
                            question_id: id.clone(),
                            question_index,
                            answer,
                        });
                        stack.push((q.edge(answer).clone(), steps));
                    }
                }
            }
        }
        out.into_iter()
            .map(|p| p.expect("every leaf is reachable in a validated tree"))
            .collect()
    }
}

/// Per-leaf probabilities `p_l` in `[0, 1]`, keyed by leaf id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeafProbabilities {
    pub values: BTreeMap<String, f64>,
}

impl LeafProbabilities {
    pub fn get(&self, leaf_id: &str) -> f64 {
        self.values.get(leaf_id).copied().unwrap_or(0.0)
    }

    /// Values in leaf document order of `tree`.
    pub fn by_leaf_index(&self, tree: &ProcessTree) -> Vec<f64> {
        tree.leaves().iter().map(|l| self.get(&l.id)).collect()
    }

    /// Sum of `p_l` over the leaves carrying `label`.
    pub fn label_mass(&self, tree: &ProcessTree, label: &str) -> f64 {
        tree.leaves()
            .iter()
            .filter(|l| l.label == label)
            .map(|l| self.get(&l.id))
            .sum()
    }
}

/// Exact leaf probabilities as rationals.
///
/// Paths are grouped by `example_id`; each path is canonicalized first.
pub fn estimate_leaf_probabilities_exact(
    annotations: &[AnnotationPath],
    tree: &ProcessTree,
) -> Result<BTreeMap<String, BigRational>, TreeError> {
    if annotations.is_empty() {
        return Err(TreeError::EmptyAnnotations);
    }
    // example -> leaf index -> annotator count, plus total annotators
    let mut per_example: BTreeMap<&str, (BTreeMap<usize, u64>, u64)> = BTreeMap::new();
    for path in annotations {
        let canonical = tree.canonicalize_path(path)?;
        let leaf = tree.walk(&canonical)?;
        let entry = per_example.entry(path.example_id.as_str()).or_default();
        *entry.0.entry(leaf).or_insert(0) += 1;
        entry.1 += 1;
    }

    let mut sums = vec![BigRational::zero(); tree.leaves().len()];
    let mut counts = vec![0u64; tree.leaves().len()];
    for (leaf_counts, total) in per_example.values() {
        for (&leaf, &n) in leaf_counts {
            sums[leaf] += BigRational::new(BigInt::from(n), BigInt::from(*total));
            counts[leaf] += 1;
        }
    }

    Ok(tree
        .leaves()
        .iter()
        .enumerate()
        .map(|(i, leaf)| {
            let p = if counts[i] == 0 {
                BigRational::zero()
            } else {
                &sums[i] / BigRational::from_integer(BigInt::from(counts[i]))
            };
            (leaf.id.clone(), p)
        })
        .collect())
}

/// Leaf probabilities from annotator agreement. Leaves no annotator reached
/// get `0`.
pub fn estimate_leaf_probabilities(
    annotations: &[AnnotationPath],
    tree: &ProcessTree,
) -> Result<LeafProbabilities, TreeError> {
    let exact = estimate_leaf_probabilities_exact(annotations, tree)?;
    Ok(LeafProbabilities {
        values: exact
            .into_iter()
            .map(|(id, p)| (id, p.to_f64().unwrap_or(0.0)))
            .collect(),
    })
}
