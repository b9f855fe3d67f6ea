//! Scoring, training and explaining with a question tree.
//!
//! For a post split into fragments, question `i` is answered *yes* when some
//! fragment's kernel similarity to the question reaches the threshold
//! `theta_i`, and *no* when every fragment stays at or below it. A label's
//! score is the sum over its leaves of `p_l` times the product of the answers
//! along the leaf's signed path. Exact ties satisfy both answers.
//!
//! Training relaxes each indicator with logistic functions at temperature
//! `tau`: per fragment `s_j = sigmoid((K_j - theta) / tau)`, and the OR over
//! fragments becomes `sigmoid((sum_j s_j - 0.5) / tau)` for *yes* and its
//! complement for *no*. Thresholds are fit one coordinate at a time with the
//! damped Newton update `theta -= g / (h + 1)`, using central finite
//! differences for `g` and `h`, on the negative log-likelihood of the gold
//! label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{all_paths, AnnotatedExample};
use crate::embeddings::{embed_fragment, embed_tokens, FragmentRepresentation, WordVectors};
use crate::kernels::{kernel, KernelError, KernelRange, KernelSpec};
use crate::text::{post_fragments, tokenize, Fragment, TextError, MAX_WINDOW};
use crate::tree::{estimate_leaf_probabilities, Answer, LeafProbabilities, ProcessTree, SignedPath, TreeError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("no threshold for question {0:?}")]
    MissingThreshold(String),
    #[error("threshold {value} for question {id:?} lies outside the kernel range [{lo}, {hi}]")]
    ThresholdOutOfRange { id: String, value: f64, lo: f64, hi: f64 },
    #[error("no probability for leaf {0:?}")]
    MissingLeafProbability(String),
    #[error("probability {value} for leaf {leaf:?} is outside [0, 1]")]
    InvalidProbability { leaf: String, value: f64 },
    #[error("invalid soft config: {0}")]
    InvalidSoftConfig(String),
    #[error("fragment window must be in 1..={MAX_WINDOW}, got {0}")]
    InvalidWindow(usize),
    #[error("max_tokens must be positive")]
    InvalidMaxTokens,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Logistic relaxation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftConfig {
    /// Sigmoid temperature.
    pub tau: f64,
    /// Probabilities in the loss are clamped to `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
}

impl Default for SoftConfig {
    fn default() -> Self {
        SoftConfig {
            tau: 0.05,
            epsilon: 1e-6,
        }
    }
}

impl SoftConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ModelError::InvalidSoftConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(ModelError::InvalidSoftConfig(format!(
                "epsilon must be in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Hard,
    Soft(SoftConfig),
}

/// Per-question thresholds keyed by main-question id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thresholds {
    pub values: BTreeMap<String, f64>,
}

impl Thresholds {
    /// Every question at the midpoint of the kernel range.
    pub fn midpoint(tree: &ProcessTree, kernel: &KernelSpec) -> Self {
        let mid = kernel.range().midpoint();
        Self::from_vec(tree, &vec![mid; tree.num_questions()])
    }

    pub fn from_vec(tree: &ProcessTree, values: &[f64]) -> Self {
        Thresholds {
            values: tree
                .questions()
                .iter()
                .zip(values)
                .map(|(q, &v)| (q.id.clone(), v))
                .collect(),
        }
    }

    /// Values in tree question order.
    pub fn to_vec(&self, tree: &ProcessTree) -> Result<Vec<f64>, ModelError> {
        tree.questions()
            .iter()
            .map(|q| {
                self.values
                    .get(&q.id)
                    .copied()
                    .ok_or_else(|| ModelError::MissingThreshold(q.id.clone()))
            })
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.values.get(id).copied()
    }
}

/// Kernel values of every fragment of a post against every question.
#[derive(Debug, Clone, PartialEq)]
pub struct PostEvidence {
    pub fragments: Vec<Fragment>,
    /// `values[question][fragment]`.
    pub values: Vec<Vec<f64>>,
}

impl PostEvidence {
    pub fn from_representations(
        fragments: Vec<Fragment>,
        fragment_reps: &[FragmentRepresentation],
        question_reps: &[FragmentRepresentation],
        spec: &KernelSpec,
    ) -> Result<Self, KernelError> {
        let values = question_reps
            .iter()
            .map(|q| {
                fragment_reps
                    .iter()
                    .map(|f| kernel(spec, &f.vector, &q.vector))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PostEvidence { fragments, values })
    }

    pub fn num_fragments(&self) -> usize {
        self.values.first().map_or(self.fragments.len(), Vec::len)
    }
}

/// Evidence for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvidence {
    pub evidence: PostEvidence,
    /// Index into the tree's labels.
    pub gold: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hard answer test over precomputed kernel values. *Yes* needs some value
/// `>= theta`; *no* needs at least one fragment and every value `<= theta`.
pub fn hard_indicator(values: &[f64], answer: Answer, theta: f64) -> bool {
    match answer {
        Answer::Yes => values.iter().any(|&k| k >= theta),
        Answer::No => !values.is_empty() && values.iter().all(|&k| k <= theta),
    }
}

/// Relaxed answer test in `(0, 1)`.
pub fn soft_indicator(values: &[f64], answer: Answer, theta: f64, tau: f64) -> f64 {
    if values.is_empty() {
        return sigmoid(-0.5 / tau);
    }
    let votes: f64 = values.iter().map(|&k| sigmoid((k - theta) / tau)).sum();
    match answer {
        Answer::Yes => sigmoid((votes - 0.5) / tau),
        Answer::No => sigmoid((0.5 - votes) / tau),
    }
}

fn kernel_values(fragments: &[FragmentRepresentation], q_rep: &FragmentRepresentation, spec: &KernelSpec) -> Vec<f64> {
    fragments
        .iter()
        .map(|f| kernel(spec, &f.vector, &q_rep.vector).expect("fragment and question share dimension"))
        .collect()
}

pub fn question_indicator_hard(
    fragments: &[FragmentRepresentation],
    q_rep: &FragmentRepresentation,
    answer: Answer,
    theta: f64,
    spec: &KernelSpec,
) -> bool {
    hard_indicator(&kernel_values(fragments, q_rep, spec), answer, theta)
}

pub fn question_indicator_soft(
    fragments: &[FragmentRepresentation],
    q_rep: &FragmentRepresentation,
    answer: Answer,
    theta: f64,
    spec: &KernelSpec,
    soft: &SoftConfig,
) -> f64 {
    soft_indicator(&kernel_values(fragments, q_rep, spec), answer, theta, soft.tau)
}

/// A trained (or initialized) classifier's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PkilModel {
    tree: ProcessTree,
    leaf_probs: LeafProbabilities,
    thresholds: Thresholds,
    kernel: KernelSpec,
    max_tokens: usize,
    fragment_window: usize,
    paths: Vec<SignedPath>,
    leaf_p: Vec<f64>,
    theta: Vec<f64>,
}

impl PkilModel {
    pub fn new(
        tree: ProcessTree,
        leaf_probs: LeafProbabilities,
        thresholds: Thresholds,
        kernel: KernelSpec,
        max_tokens: usize,
        fragment_window: usize,
    ) -> Result<Self, ModelError> {
        kernel.validate()?;
        if !(1..=MAX_WINDOW).contains(&fragment_window) {
            return Err(ModelError::InvalidWindow(fragment_window));
        }
        if max_tokens == 0 {
            return Err(ModelError::InvalidMaxTokens);
        }
        let mut leaf_p = Vec::with_capacity(tree.leaves().len());
        for leaf in tree.leaves() {
            let p = *leaf_probs
                .values
                .get(&leaf.id)
                .ok_or_else(|| ModelError::MissingLeafProbability(leaf.id.clone()))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(ModelError::InvalidProbability {
                    leaf: leaf.id.clone(),
                    value: p,
                });
            }
            leaf_p.push(p);
        }
        let theta = thresholds.to_vec(&tree)?;
        let range = kernel.range();
        for (q, &t) in tree.questions().iter().zip(&theta) {
            if !(t >= range.lo && t <= range.hi) {
                return Err(ModelError::ThresholdOutOfRange {
                    id: q.id.clone(),
                    value: t,
                    lo: range.lo,
                    hi: range.hi,
                });
            }
        }
        let paths = tree.enumerate_signed_paths();
        Ok(PkilModel {
            tree,
            leaf_probs,
            thresholds,
            kernel,
            max_tokens,
            fragment_window,
            paths,
            leaf_p,
            theta,
        })
    }

    pub fn tree(&self) -> &ProcessTree {
        &self.tree
    }

    pub fn leaf_probs(&self) -> &LeafProbabilities {
        &self.leaf_probs
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn fragment_window(&self) -> usize {
        self.fragment_window
    }

    pub fn labels(&self) -> &[String] {
        self.tree.labels()
    }

    pub fn signed_paths(&self) -> &[SignedPath] {
        &self.paths
    }

    pub fn theta_vec(&self) -> &[f64] {
        &self.theta
    }

    /// Same model with new thresholds, clamped to the kernel range.
    pub fn with_thresholds(&self, thresholds: Thresholds) -> Result<Self, ModelError> {
        let range = self.kernel.range();
        let clamped = Thresholds {
            values: thresholds
                .values
                .into_iter()
                .map(|(k, v)| (k, range.clamp(v)))
                .collect(),
        };
        PkilModel::new(
            self.tree.clone(),
            self.leaf_probs.clone(),
            clamped,
            self.kernel,
            self.max_tokens,
            self.fragment_window,
        )
    }

    fn answers(&self, evidence: &PostEvidence, theta: &[f64], mode: Mode) -> Vec<[f64; 2]> {
        evidence
            .values
            .iter()
            .zip(theta)
            .map(|(values, &t)| match mode {
                Mode::Hard => [
                    hard_indicator(values, Answer::Yes, t) as u8 as f64,
                    hard_indicator(values, Answer::No, t) as u8 as f64,
                ],
                Mode::Soft(soft) => [
                    soft_indicator(values, Answer::Yes, t, soft.tau),
                    soft_indicator(values, Answer::No, t, soft.tau),
                ],
            })
            .collect()
    }

    /// Product of answer indicators along every leaf's path (without `p_l`).
    pub fn path_values(&self, evidence: &PostEvidence, theta: &[f64], mode: Mode) -> Vec<f64> {
        let answers = self.answers(evidence, theta, mode);
        self.paths
            .iter()
            .map(|p| {
                p.steps
                    .iter()
                    .map(|s| answers[s.question_index][(s.answer == Answer::No) as usize])
                    .product()
            })
            .collect()
    }

    /// Unnormalized score of every label under thresholds `theta`.
    pub fn label_scores_with(&self, evidence: &PostEvidence, theta: &[f64], mode: Mode) -> Vec<f64> {
        let mut scores = vec![0.0; self.labels().len()];
        for (path, v) in self.paths.iter().zip(self.path_values(evidence, theta, mode)) {
            scores[path.label_index] += self.leaf_p[path.leaf_index] * v;
        }
        scores
    }

    pub fn label_scores(&self, evidence: &PostEvidence, mode: Mode) -> Vec<f64> {
        self.label_scores_with(evidence, &self.theta, mode)
    }

    /// Prior mass `sum p_l` of every label.
    pub fn label_priors(&self) -> Vec<f64> {
        let mut priors = vec![0.0; self.labels().len()];
        for path in &self.paths {
            priors[path.label_index] += self.leaf_p[path.leaf_index];
        }
        priors
    }

    /// Normalized hard prediction from precomputed evidence.
    pub fn predict_evidence(&self, evidence: &PostEvidence) -> Prediction {
        let scores = self.label_scores(evidence, Mode::Hard);
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            let scores: Vec<f64> = scores.iter().map(|s| s / total).collect();
            let label_index = argmax(&scores);
            Prediction {
                label: self.labels()[label_index].clone(),
                label_index,
                scores,
                fallback: false,
            }
        } else {
            let priors = self.label_priors();
            let label_index = argmax(&priors);
            let mass: f64 = priors.iter().sum();
            let n = priors.len() as f64;
            let scores = if mass > 0.0 {
                priors.iter().map(|p| p / mass).collect()
            } else {
                vec![1.0 / n; priors.len()]
            };
            Prediction {
                label: self.labels()[label_index].clone(),
                label_index,
                scores,
                fallback: true,
            }
        }
    }

    /// Explanation of the hard prediction for `evidence`.
    pub fn explain_evidence(&self, evidence: &PostEvidence) -> Explanation {
        let prediction = self.predict_evidence(evidence);
        let normalized_scores = self
            .labels()
            .iter()
            .cloned()
            .zip(prediction.scores.iter().copied())
            .collect();
        let questions = self.tree.questions();

        if prediction.fallback {
            let closest = evidence
                .values
                .iter()
                .zip(&self.theta)
                .enumerate()
                .filter_map(|(i, (values, &t))| {
                    values
                        .iter()
                        .enumerate()
                        .map(|(j, &k)| (j, k, (k - t).abs()))
                        .min_by(|a, b| a.2.total_cmp(&b.2))
                        .map(|(j, k, gap)| (i, j, k, t, gap))
                })
                .min_by(|a, b| a.4.total_cmp(&b.4))
                .map(|(i, j, k, t, _)| ClosestQuestion {
                    question_id: questions[i].id.clone(),
                    question_text: questions[i].text.clone(),
                    best_fragment: evidence.fragments.get(j).cloned(),
                    kernel_value: k,
                    threshold: t,
                });
            let mut rendering = format!("fallback → {}", prediction.label);
            if let Some(c) = &closest {
                rendering.push_str(&format!(
                    " (no satisfied path; closest question {}. {})",
                    c.question_id, c.question_text
                ));
            }
            return Explanation {
                leaf_id: None,
                label: prediction.label,
                leaf_probability: 0.0,
                steps: Vec::new(),
                normalized_scores,
                fallback: true,
                closest_question: closest,
                rendering,
            };
        }

        let values = self.path_values(evidence, &self.theta, Mode::Hard);
        let winner = self
            .paths
            .iter()
            .zip(&values)
            .filter(|(p, &v)| v > 0.0 && p.label_index == prediction.label_index)
            .max_by(|a, b| {
                self.leaf_p[a.0.leaf_index]
                    .total_cmp(&self.leaf_p[b.0.leaf_index])
                    .then(b.0.leaf_index.cmp(&a.0.leaf_index))
            })
            .map(|(p, _)| p)
            .expect("a non-fallback prediction has a satisfied path");

        let steps: Vec<ExplanationStep> = winner
            .steps
            .iter()
            .map(|s| {
                let t = self.theta[s.question_index];
                let vals = &evidence.values[s.question_index];
                let j = best_fragment_index(vals, s.answer, t).expect("satisfied step has a fragment");
                let q = &questions[s.question_index];
                ExplanationStep {
                    question_id: q.id.clone(),
                    question_text: q.text.clone(),
                    answer: s.answer,
                    best_fragment: evidence.fragments.get(j).cloned(),
                    fragment_index: j,
                    kernel_value: vals[j],
                    threshold: t,
                }
            })
            .collect();

        let mut rendering = String::new();
        for s in &steps {
            rendering.push_str(&format!("{}. {} ({}) → ", s.question_id, s.question_text, s.answer));
        }
        rendering.push_str(&winner.label);

        Explanation {
            leaf_id: Some(winner.leaf_id.clone()),
            label: winner.label.clone(),
            leaf_probability: self.leaf_p[winner.leaf_index],
            steps,
            normalized_scores,
            fallback: false,
            closest_question: None,
            rendering,
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Fragment maximizing `sign * (K - theta)`: the most similar fragment for a
/// *yes*, the least similar for a *no*. Ties keep the earliest fragment.
pub fn best_fragment_index(values: &[f64], answer: Answer, theta: f64) -> Option<usize> {
    let sign = answer.sign();
    let mut best: Option<(usize, f64)> = None;
    for (j, &k) in values.iter().enumerate() {
        let margin = sign * (k - theta);
        if best.is_none_or(|(_, m)| margin > m) {
            best = Some((j, margin));
        }
    }
    best.map(|(j, _)| j)
}

/// Unnormalized score of one label.
pub fn label_score(evidence: &PostEvidence, label: &str, model: &PkilModel, mode: Mode) -> Result<f64, ModelError> {
    let i = model
        .tree()
        .label_index(label)
        .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))?;
    Ok(model.label_scores(evidence, mode)[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub label_index: usize,
    /// Normalized scores in tree label order; they sum to 1.
    pub scores: Vec<f64>,
    /// No path was satisfied (or all satisfied leaves have `p_l = 0`) and the
    /// label with the largest prior mass was returned.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationStep {
    pub question_id: String,
    pub question_text: String,
    pub answer: Answer,
    pub best_fragment: Option<Fragment>,
    pub fragment_index: usize,
    pub kernel_value: f64,
    pub threshold: f64,
}

impl ExplanationStep {
    /// `sign * K >= sign * theta`.
    pub fn satisfied(&self) -> bool {
        let s = self.answer.sign();
        s * self.kernel_value >= s * self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosestQuestion {
    pub question_id: String,
    pub question_text: String,
    pub best_fragment: Option<Fragment>,
    pub kernel_value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub leaf_id: Option<String>,
    pub label: String,
    pub leaf_probability: f64,
    pub steps: Vec<ExplanationStep>,
    pub normalized_scores: BTreeMap<String, f64>,
    pub fallback: bool,
    pub closest_question: Option<ClosestQuestion>,
    /// `1. question (yes) → 2. question (no) → label`
    pub rendering: String,
}

/// Turns raw posts into evidence for a model.
pub struct Classifier<'a> {
    model: &'a PkilModel,
    vectors: &'a WordVectors,
    question_reps: Vec<FragmentRepresentation>,
}

impl<'a> Classifier<'a> {
    pub fn new(model: &'a PkilModel, vectors: &'a WordVectors) -> Self {
        let question_reps = model
            .tree()
            .questions()
            .iter()
            .map(|q| embed_tokens(&tokenize(&q.text), vectors, model.max_tokens()))
            .collect();
        Classifier {
            model,
            vectors,
            question_reps,
        }
    }

    pub fn model(&self) -> &PkilModel {
        self.model
    }

    pub fn question_reps(&self) -> &[FragmentRepresentation] {
        &self.question_reps
    }

    pub fn evidence(&self, post: &str) -> PostEvidence {
        let fragments = post_fragments(post, self.model.fragment_window()).expect("window validated by the model");
        let reps: Vec<_> = fragments
            .iter()
            .map(|f| embed_fragment(f, self.vectors, self.model.max_tokens()))
            .collect();
        PostEvidence::from_representations(fragments, &reps, &self.question_reps, self.model.kernel())
            .expect("fragments and questions share dimension")
    }

    pub fn predict(&self, post: &str) -> Prediction {
        self.model.predict_evidence(&self.evidence(post))
    }

    pub fn explain(&self, post: &str) -> Explanation {
        self.model.explain_evidence(&self.evidence(post))
    }

    pub fn labeled_evidence(&self, examples: &[AnnotatedExample]) -> Result<Vec<LabeledEvidence>, ModelError> {
        examples
            .iter()
            .map(|e| {
                let gold = self
                    .model
                    .tree()
                    .label_index(&e.gold_label)
                    .ok_or_else(|| ModelError::UnknownLabel(e.gold_label.clone()))?;
                Ok(LabeledEvidence {
                    evidence: self.evidence(&e.text),
                    gold,
                })
            })
            .collect()
    }
}

/// Mean negative log-likelihood of the gold labels under the relaxed model.
///
/// The gold label's soft score is normalized across labels and clamped to
/// `[epsilon, 1 - epsilon]`.
pub fn loss(
    dataset: &[LabeledEvidence],
    theta: &[f64],
    model: &PkilModel,
    soft: &SoftConfig,
) -> Result<f64, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let total: f64 = dataset
        .iter()
        .map(|ex| {
            let scores = model.label_scores_with(&ex.evidence, theta, Mode::Soft(*soft));
            let sum: f64 = scores.iter().sum();
            let p = if sum > 0.0 { scores[ex.gold] / sum } else { 0.0 };
            let p = if p.is_finite() { p } else { 0.0 };
            -p.clamp(soft.epsilon, 1.0 - soft.epsilon).ln()
        })
        .sum();
    Ok(total / dataset.len() as f64)
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Central first and second differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (up, mid, down) = (f(x + h), f(x), f(x - h));
    ((up - down) / (2.0 * h), (up - 2.0 * mid + down) / (h * h))
}

/// Derivatives of the loss in one threshold, all others held fixed.
pub fn grad_and_curvature(
    dataset: &[LabeledEvidence],
    theta: &[f64],
    model: &PkilModel,
    soft: &SoftConfig,
    question: usize,
    h: f64,
) -> Result<(f64, f64), ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let eval = |t: f64| {
        let mut p = theta.to_vec();
        p[question] = t;
        loss(dataset, &p, model, soft).expect("non-empty dataset")
    };
    Ok(finite_difference(eval, theta[question], h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub iterations: usize,
    pub soft: SoftConfig,
    pub fd_step: f64,
    /// Reject steps that raise the loss (see [`train_newton`]). Off gives the
    /// plain update.
    pub safeguard: bool,
    /// Points in the per-coordinate scan, ends included.
    pub scan_points: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            iterations: 25,
            soft: SoftConfig::default(),
            fd_step: FD_STEP,
            safeguard: true,
            scan_points: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub thresholds: Thresholds,
    pub initial_loss: f64,
    /// Loss after each iteration.
    pub trajectory: Vec<f64>,
}

/// Fit thresholds by per-coordinate damped Newton steps, starting from the
/// model's current thresholds.
///
/// The relaxed loss is flat wherever every example is confidently right or
/// wrong, and has negative curvature between, so the bare update can stall,
/// crawl or climb. With `safeguard` on, each coordinate is first moved to the
/// best point of an evenly spaced scan of the kernel range (if strictly
/// better), then takes the Newton step, halved up to four times until it
/// lowers the loss. The loss trajectory is then non-increasing.
pub fn train_newton(
    dataset: &[LabeledEvidence],
    model: &PkilModel,
    config: &NewtonConfig,
) -> Result<NewtonOutcome, ModelError> {
    config.soft.validate()?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let range: KernelRange = model.kernel().range();
    let soft = &config.soft;
    let mut theta = model.theta_vec().to_vec();
    let finite = |l: f64, iteration: usize| {
        if l.is_finite() {
            Ok(l)
        } else {
            Err(ModelError::NonFiniteLoss { iteration })
        }
    };
    let initial_loss = finite(loss(dataset, &theta, model, soft)?, 0)?;
    let mut trajectory = Vec::with_capacity(config.iterations);

    let mut current = initial_loss;
    for iteration in 1..=config.iterations {
        for i in 0..theta.len() {
            if config.safeguard {
                let n = config.scan_points.max(2);
                for k in 0..n {
                    let candidate = range.lo + range.width() * k as f64 / (n - 1) as f64;
                    let saved = theta[i];
                    theta[i] = candidate;
                    let l = finite(loss(dataset, &theta, model, soft)?, iteration)?;
                    if l < current {
                        current = l;
                    } else {
                        theta[i] = saved;
                    }
                }
            }
            let (g, c) = grad_and_curvature(dataset, &theta, model, soft, i, config.fd_step)?;
            finite(g + c, iteration)?;
            let damped = c + 1.0;
            let step = if damped.abs() < 1e-8 { 0.0 } else { g / damped };
            if !config.safeguard {
                theta[i] = range.clamp(theta[i] - step);
                continue;
            }
            let start = theta[i];
            let mut scale = 1.0;
            for _ in 0..5 {
                let candidate = range.clamp(start - scale * step);
                if candidate == start {
                    break;
                }
                theta[i] = candidate;
                let l = finite(loss(dataset, &theta, model, soft)?, iteration)?;
                if l < current {
                    current = l;
                    break;
                }
                theta[i] = start;
                scale *= 0.5;
            }
        }
        current = finite(loss(dataset, &theta, model, soft)?, iteration)?;
        trajectory.push(current);
    }

    Ok(NewtonOutcome {
        thresholds: Thresholds::from_vec(model.tree(), &theta),
        initial_loss,
        trajectory,
    })
}

/// Where training starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdInit {
    /// Kernel-range midpoint for every question.
    Midpoint,
    /// Per question, the split that best separates posts whose annotators
    /// answered *yes* from those answering *no* (see [`annotation_thresholds`]).
    #[default]
    Annotations,
}

/// Hyperparameters for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub kernel: KernelSpec,
    pub fragment_window: usize,
    pub max_tokens: usize,
    pub init: ThresholdInit,
    pub newton: NewtonConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kernel: KernelSpec::default(),
            fragment_window: crate::text::DEFAULT_WINDOW,
            max_tokens: 30,
            init: ThresholdInit::default(),
            newton: NewtonConfig::default(),
        }
    }
}

/// One threshold per question from the annotators' own answers.
///
/// A post counts as *yes* (*no*) for a question when more of the annotators
/// whose path visits the question answered yes (no), weighted by the margin
/// of votes. Its hard test passes *yes* exactly when the largest kernel value
/// reaches the threshold, so each question reduces to a one-dimensional
/// split of those maxima. Candidates are the range ends and midpoints between
/// consecutive maxima; the one with the least vote-weighted disagreement
/// wins, ties going to the widest gap. Questions with no usable votes keep
/// the midpoint.
pub fn annotation_thresholds(
    examples: &[AnnotatedExample],
    dataset: &[LabeledEvidence],
    model: &PkilModel,
) -> Thresholds {
    let tree = model.tree();
    let range = model.kernel().range();
    let theta: Vec<f64> = (0..tree.num_questions())
        .map(|qi| {
            // (max kernel value, net yes votes)
            let mut points: Vec<(f64, i64)> = Vec::new();
            for (example, ev) in examples.iter().zip(dataset) {
                let Some(max) = ev.evidence.values[qi].iter().copied().reduce(f64::max) else {
                    continue;
                };
                let mut votes = 0i64;
                for path in &example.annotations {
                    for step in &path.steps {
                        if tree.canonical_question(&step.question) == Some(qi) {
                            votes += step.answer.sign() as i64;
                        }
                    }
                }
                if votes != 0 {
                    points.push((max, votes));
                }
            }
            if points.is_empty() {
                return range.midpoint();
            }
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            // (threshold, width of the gap it sits in)
            let mut candidates = vec![(range.lo, points[0].0 - range.lo)];
            candidates.extend(
                points
                    .windows(2)
                    .filter(|w| w[0].0 < w[1].0)
                    .map(|w| (0.5 * (w[0].0 + w[1].0), w[1].0 - w[0].0)),
            );
            candidates.push((range.hi, range.hi - points[points.len() - 1].0));
            let cost = |t: f64| -> i64 {
                points
                    .iter()
                    .filter(|&&(k, v)| (k >= t) != (v > 0))
                    .map(|&(_, v)| v.abs())
                    .sum()
            };
            let mut best = (candidates[0].0, cost(candidates[0].0), candidates[0].1);
            for &(t, gap) in &candidates[1..] {
                let c = cost(t);
                if c < best.1 || (c == best.1 && gap > best.2) {
                    best = (t, c, gap);
                }
            }
            range.clamp(best.0)
        })
        .collect();
    Thresholds::from_vec(tree, &theta)
}

/// Estimate leaf probabilities from the annotations, initialize the
/// thresholds and train with Newton's method.
pub fn fit(
    tree: &ProcessTree,
    examples: &[AnnotatedExample],
    vectors: &WordVectors,
    config: &FitConfig,
) -> Result<(PkilModel, NewtonOutcome), ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let leaf_probs = estimate_leaf_probabilities(&all_paths(examples), tree)?;
    let midpoint = PkilModel::new(
        tree.clone(),
        leaf_probs,
        Thresholds::midpoint(tree, &config.kernel),
        config.kernel,
        config.max_tokens,
        config.fragment_window,
    )?;
    let dataset = Classifier::new(&midpoint, vectors).labeled_evidence(examples)?;
    let initial = match config.init {
        ThresholdInit::Midpoint => midpoint,
        ThresholdInit::Annotations => midpoint.with_thresholds(annotation_thresholds(examples, &dataset, &midpoint))?,
    };
    let outcome = train_newton(&dataset, &initial, &config.newton)?;
    let model = initial.with_thresholds(outcome.thresholds.clone())?;
    Ok((model, outcome))
}
