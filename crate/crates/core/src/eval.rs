//! Metrics, synthetic data, the brute-force threshold oracle and the
//! baseline-versus-tree comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{predict_baseline, train_baseline, BaselineConfig, BaselineError};
use crate::dataset::{group_records, AnnotatedExample, AnnotationRecord, DatasetError};
use crate::embeddings::WordVectors;
use crate::kernels::KernelSpec;
use crate::model::{fit, loss, Classifier, FitConfig, LabeledEvidence, ModelError, PkilModel, SoftConfig, Thresholds};
use crate::text::tokenize;
use crate::tree::{Answer, Leaf, NodeRef, PathStep, ProcessTree, QuestionEntry, SignedPath, TreeDocument};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("no examples")]
    Empty,
    #[error("every label lacks positives or negatives; AUC undefined")]
    AllLabelsDegenerate,
    #[error("brute force supports at most 3 questions, tree has {0}")]
    TooManyQuestions(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("label {0:?} is absent from the training split")]
    LabelMissingFromTrain(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(predictions: &[T], gold: &[T]) -> Result<f64, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Mann-Whitney AUC of `scores` for the positives, ties at midranks.
/// `None` if either class is empty.
fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * midrank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Unweighted mean of one-vs-rest AUCs. `scores[example][label]`; labels
/// without positives or without negatives are skipped with a warning.
pub fn auc_roc_macro(scores: &[Vec<f64>], gold: &[usize]) -> Result<f64, EvalError> {
    if scores.len() != gold.len() {
        return Err(EvalError::LengthMismatch(scores.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let n_labels = scores[0].len();
    let mut aucs = Vec::with_capacity(n_labels);
    for label in 0..n_labels {
        let column: Vec<f64> = scores.iter().map(|s| s[label]).collect();
        let positive: Vec<bool> = gold.iter().map(|&g| g == label).collect();
        match binary_auc(&column, &positive) {
            Some(a) => aucs.push(a),
            None => log::warn!("label {label} has no positives or no negatives; excluded from AUC"),
        }
    }
    if aucs.is_empty() {
        return Err(EvalError::AllLabelsDegenerate);
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_auc_roc: f64,
    pub labels: Vec<String>,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn compute(
        labels: &[String],
        gold: &[usize],
        predicted: &[usize],
        scores: &[Vec<f64>],
    ) -> Result<Self, EvalError> {
        let accuracy = accuracy(predicted, gold)?;
        let macro_auc_roc = auc_roc_macro(scores, gold)?;
        let mut confusion = vec![vec![0; labels.len()]; labels.len()];
        for (&g, &p) in gold.iter().zip(predicted) {
            confusion[g][p] += 1;
        }
        Ok(Metrics {
            accuracy,
            macro_auc_roc,
            labels: labels.to_vec(),
            confusion,
        })
    }
}

const FILLER: &[&str] = &[
    "today", "weather", "coffee", "morning", "train", "office", "music", "movie", "weekend", "garden", "dinner",
    "friend", "shop", "street", "window", "paper", "phone", "game", "book", "walk", "rain", "lunch", "city", "park",
    "bus", "class", "video", "photo", "kitchen", "table", "chair", "river", "bridge", "road", "market", "song",
    "story", "school", "team", "night",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_examples: usize,
    pub n_annotators: usize,
    /// Chance that an annotator diverts from the true path.
    pub label_noise: f64,
    /// Extra words per question id; a themed sentence is the question's own
    /// tokens with some swapped for these.
    pub vocabulary_theme: BTreeMap<String, Vec<String>>,
    /// Per-token substitution probability in themed sentences.
    pub substitution: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_examples: 120,
            n_annotators: 3,
            label_noise: 0.0,
            vocabulary_theme: BTreeMap::new(),
            substitution: 0.15,
            rng_seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_annotators == 0 {
            return Err(EvalError::InvalidConfig("n_annotators must be >= 1".into()));
        }
        if self.n_examples == 0 {
            return Err(EvalError::InvalidConfig("n_examples must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(EvalError::InvalidConfig(format!(
                "label_noise {} outside [0, 1]",
                self.label_noise
            )));
        }
        if !(0.0..=1.0).contains(&self.substitution) {
            return Err(EvalError::InvalidConfig(format!(
                "substitution {} outside [0, 1]",
                self.substitution
            )));
        }
        Ok(())
    }
}

fn sentence(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push('.');
    s
}

fn themed_sentence(rng: &mut ChaCha8Rng, base: &[String], theme: &[String], substitution: f64) -> String {
    let mut words: Vec<String> = base
        .iter()
        .map(|w| {
            if !theme.is_empty() && rng.gen::<f64>() < substitution {
                theme[rng.gen_range(0..theme.len())].clone()
            } else {
                w.clone()
            }
        })
        .collect();
    if words.len() > 2 && rng.gen::<f64>() < 0.25 {
        words.pop();
    }
    sentence(&words)
}

fn filler_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(4..=9);
    let words: Vec<String> = (0..n)
        .map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string())
        .collect();
    sentence(&words)
}

/// From `start`, answer every question at random until a leaf.
fn random_walk(rng: &mut ChaCha8Rng, tree: &ProcessTree, start: &NodeRef, steps: &mut Vec<PathStep>) {
    let mut node = start.clone();
    while let NodeRef::Question(id) = node {
        let answer = if rng.gen::<bool>() { Answer::Yes } else { Answer::No };
        let q = tree.question(&id).expect("validated tree");
        node = q.edge(answer).clone();
        steps.push(PathStep::new(id, answer));
    }
}

fn annotator_path(rng: &mut ChaCha8Rng, tree: &ProcessTree, truth: &SignedPath, noise: f64) -> Vec<PathStep> {
    let mut steps: Vec<PathStep> = truth
        .steps
        .iter()
        .map(|s| PathStep::new(s.question_id.clone(), s.answer))
        .collect();
    if rng.gen::<f64>() >= noise {
        return steps;
    }
    let at = rng.gen_range(0..steps.len());
    steps.truncate(at + 1);
    let flipped = steps[at].answer.flip();
    steps[at].answer = flipped;
    let next = tree
        .question(&steps[at].question)
        .expect("validated tree")
        .edge(flipped)
        .clone();
    random_walk(rng, tree, &next, &mut steps);
    steps
}

/// Seeded synthetic posts with annotator paths.
///
/// Each post follows a leaf drawn uniformly at random. Every question answered
/// *yes* on that path contributes one or two sentences built from the
/// question's own words, and one to three unrelated filler sentences are mixed
/// in. Each annotator reports the true path with probability
/// `1 - label_noise`; otherwise they flip the answer at a random question on
/// the path and continue at random from there.
pub fn generate_synthetic(config: &SyntheticConfig, tree: &ProcessTree) -> Result<Vec<AnnotatedExample>, EvalError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let paths = tree.enumerate_signed_paths();
    let bases: Vec<Vec<String>> = tree.questions().iter().map(|q| tokenize(&q.text)).collect();
    let themes: Vec<Vec<String>> = tree
        .questions()
        .iter()
        .zip(&bases)
        .map(|(q, base)| {
            let mut theme = base.clone();
            if let Some(extra) = config.vocabulary_theme.get(&q.id) {
                theme.extend(extra.iter().flat_map(|w| tokenize(w)));
            }
            theme
        })
        .collect();

    let width = config.n_examples.to_string().len();
    let mut records = Vec::with_capacity(config.n_examples * config.n_annotators);
    for i in 0..config.n_examples {
        let truth = &paths[rng.gen_range(0..paths.len())];
        let mut sentences = Vec::new();
        for step in truth.steps.iter().filter(|s| s.answer == Answer::Yes) {
            let q = step.question_index;
            for _ in 0..rng.gen_range(1..=2) {
                sentences.push(themed_sentence(&mut rng, &bases[q], &themes[q], config.substitution));
            }
        }
        for _ in 0..rng.gen_range(1..=3) {
            sentences.push(filler_sentence(&mut rng));
        }
        sentences.shuffle(&mut rng);
        let text = sentences.join(" ");

        let example_id = format!("syn-{i:0width$}");
        for a in 0..config.n_annotators {
            let steps = annotator_path(&mut rng, tree, truth, config.label_noise);
            let leaf = {
                let path = crate::tree::AnnotationPath {
                    example_id: example_id.clone(),
                    annotator_id: String::new(),
                    steps: steps.clone(),
                };
                tree.walk(&path).map_err(DatasetError::from)?
            };
            records.push(AnnotationRecord {
                example_id: example_id.clone(),
                annotator_id: format!("a{}", a + 1),
                steps,
                label: tree.leaves()[leaf].label.clone(),
                text: (a == 0).then(|| text.clone()),
            });
        }
    }
    Ok(group_records(&records, tree)?)
}

/// A random tree with `n_questions` questions (`Q1`, `Q2`, ... in preorder)
/// and leaves labelled uniformly from `L1..=Ln` with `n = n_labels`.
pub fn random_tree(n_questions: usize, n_labels: usize, seed: u64) -> ProcessTree {
    fn build(
        rng: &mut ChaCha8Rng,
        k: usize,
        n_labels: usize,
        questions: &mut Vec<QuestionEntry>,
        leaves: &mut Vec<Leaf>,
    ) -> NodeRef {
        if k == 0 {
            let id = format!("leaf{}", leaves.len() + 1);
            leaves.push(Leaf {
                id: id.clone(),
                label: format!("L{}", rng.gen_range(1..=n_labels.max(1))),
            });
            return NodeRef::Leaf(id);
        }
        let id = format!("Q{}", questions.len() + 1);
        let slot = questions.len();
        questions.push(QuestionEntry {
            id: id.clone(),
            parent_id: None,
            text: format!("question {}", slot + 1),
            yes: None,
            no: None,
        });
        let left = rng.gen_range(0..k);
        let yes = build(rng, left, n_labels, questions, leaves);
        let no = build(rng, k - 1 - left, n_labels, questions, leaves);
        questions[slot].yes = Some(yes);
        questions[slot].no = Some(no);
        NodeRef::Question(id)
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut questions, mut leaves) = (Vec::new(), Vec::new());
    let root = build(&mut rng, n_questions, n_labels, &mut questions, &mut leaves);
    ProcessTree::from_document(TreeDocument {
        root,
        questions,
        leaves,
    })
    .expect("generated trees are valid")
}

/// Largest allowed tree for [`brute_force_thresholds`].
pub const MAX_BRUTE_FORCE_QUESTIONS: usize = 3;

/// Exhaustive search over `lo, lo + step, ...` (not exceeding `hi`) in every
/// threshold. Returns the first grid point attaining the minimum loss.
pub fn brute_force_thresholds(
    dataset: &[LabeledEvidence],
    model: &PkilModel,
    grid_step: f64,
    soft: &SoftConfig,
) -> Result<(Thresholds, f64), EvalError> {
    let nq = model.tree().num_questions();
    if nq > MAX_BRUTE_FORCE_QUESTIONS {
        return Err(EvalError::TooManyQuestions(nq));
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(EvalError::InvalidConfig("grid step must be positive".into()));
    }
    let range = model.kernel().range();
    let mut grid = Vec::new();
    for k in 0.. {
        let t = range.lo + k as f64 * grid_step;
        if t > range.hi + 1e-12 {
            break;
        }
        grid.push(t.min(range.hi));
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut index = vec![0usize; nq];
    let mut theta = vec![grid[0]; nq];
    loop {
        for (t, &i) in theta.iter_mut().zip(&index) {
            *t = grid[i];
        }
        let l = loss(dataset, &theta, model, soft)?;
        if best.as_ref().is_none_or(|(_, b)| l < *b) {
            best = Some((theta.clone(), l));
        }
        // Odometer increment.
        let mut d = 0;
        while d < nq {
            index[d] += 1;
            if index[d] < grid.len() {
                break;
            }
            index[d] = 0;
            d += 1;
        }
        if d == nq {
            break;
        }
    }
    let (theta, l) = best.expect("grid is non-empty");
    Ok((Thresholds::from_vec(model.tree(), &theta), l))
}

/// Stratified split: per label, a seeded shuffle puts `round(n * test_fraction)`
/// examples in the test set, keeping at least one in train.
pub fn stratified_split(gold: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::InvalidConfig(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in gold.iter().enumerate() {
        by_label.entry(g).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_label {
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).min(idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub test_fraction: f64,
    pub seed: u64,
    /// Independent splits averaged per cell.
    pub repeats: usize,
    pub baseline: BaselineConfig,
    /// Shared settings for both tree models; the kernel is overridden.
    pub pkil: FitConfig,
    pub cosine: KernelSpec,
    pub gaussian: KernelSpec,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            test_fraction: 0.2,
            seed: 1,
            repeats: 1,
            baseline: BaselineConfig::default(),
            pkil: FitConfig::default(),
            cosine: KernelSpec::Cosine,
            gaussian: KernelSpec::Gaussian { sigma: 1.0 },
        }
    }
}

pub const METHODS: [&str; 3] = ["baseline", "pkil-cosine", "pkil-gaussian"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub embedding: String,
    /// One cell per entry of [`METHODS`].
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn cell(&self, embedding: &str, method: &str) -> Option<Cell> {
        let m = self.methods.iter().position(|x| x == method)?;
        self.rows.iter().find(|r| r.embedding == embedding).map(|r| r.cells[m])
    }

    /// `embedding` then `accuracy` / `auc` columns per method.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("embedding");
        for m in &self.methods {
            write!(out, "\t{m}_accuracy\t{m}_auc").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.embedding);
            for c in &r.cells {
                write!(out, "\t{:.6}\t{:.6}", c.accuracy, c.auc).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Aligned table with `accuracy/auc` per cell.
    pub fn to_text(&self) -> String {
        let mut header = vec!["embedding".to_string()];
        header.extend(self.methods.iter().cloned());
        let mut rows = vec![header];
        for r in &self.rows {
            let mut row = vec![r.embedding.clone()];
            row.extend(r.cells.iter().map(|c| format!("{:.3}/{:.3}", c.accuracy, c.auc)));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
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

fn pkil_metrics(
    tree: &ProcessTree,
    train: &[AnnotatedExample],
    test: &[AnnotatedExample],
    test_gold: &[usize],
    vectors: &WordVectors,
    config: &FitConfig,
) -> Result<Metrics, EvalError> {
    let (model, _) = fit(tree, train, vectors, config)?;
    let classifier = Classifier::new(&model, vectors);
    let predictions: Vec<_> = test.iter().map(|e| classifier.predict(&e.text)).collect();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.label_index).collect();
    let scores: Vec<Vec<f64>> = predictions.into_iter().map(|p| p.scores).collect();
    Metrics::compute(tree.labels(), test_gold, &predicted, &scores)
}

/// Train and score every method on every embedding source.
pub fn run_comparison(
    examples: &[AnnotatedExample],
    tree: &ProcessTree,
    sources: &[(String, WordVectors)],
    config: &ComparisonConfig,
) -> Result<ComparisonTable, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    if config.repeats == 0 {
        return Err(EvalError::InvalidConfig("repeats must be >= 1".into()));
    }
    let labels = tree.labels();
    let gold: Vec<usize> = examples
        .iter()
        .map(|e| {
            tree.label_index(&e.gold_label)
                .ok_or_else(|| EvalError::Model(ModelError::UnknownLabel(e.gold_label.clone())))
        })
        .collect::<Result<_, _>>()?;

    let mut sums = vec![
        vec![
            Cell {
                accuracy: 0.0,
                auc: 0.0
            };
            METHODS.len()
        ];
        sources.len()
    ];
    for r in 0..config.repeats {
        let (train_idx, test_idx) = stratified_split(&gold, config.test_fraction, config.seed.wrapping_add(r as u64))?;
        for (i, label) in labels.iter().enumerate() {
            if !train_idx.iter().any(|&k| gold[k] == i) {
                return Err(EvalError::LabelMissingFromTrain(label.clone()));
            }
        }
        let train: Vec<AnnotatedExample> = train_idx.iter().map(|&k| examples[k].clone()).collect();
        let test: Vec<AnnotatedExample> = test_idx.iter().map(|&k| examples[k].clone()).collect();
        let test_gold: Vec<usize> = test_idx.iter().map(|&k| gold[k]).collect();
        let baseline_data: Vec<(&str, &str)> = train.iter().map(|e| (e.text.as_str(), e.gold_label.as_str())).collect();

        for (row, (_, vectors)) in sums.iter_mut().zip(sources) {
            let base = train_baseline(&baseline_data, labels, vectors, &config.baseline)?;
            let mut scores = Vec::with_capacity(test.len());
            let mut predicted = Vec::with_capacity(test.len());
            for e in &test {
                let (_, probs) = predict_baseline(&e.text, &base.model, vectors);
                predicted.push(argmax(&probs));
                scores.push(probs);
            }
            let metrics = [
                Metrics::compute(labels, &test_gold, &predicted, &scores)?,
                pkil_metrics(
                    tree,
                    &train,
                    &test,
                    &test_gold,
                    vectors,
                    &FitConfig {
                        kernel: config.cosine,
                        ..config.pkil.clone()
                    },
                )?,
                pkil_metrics(
                    tree,
                    &train,
                    &test,
                    &test_gold,
                    vectors,
                    &FitConfig {
                        kernel: config.gaussian,
                        ..config.pkil.clone()
                    },
                )?,
            ];
            for (cell, m) in row.iter_mut().zip(metrics) {
                cell.accuracy += m.accuracy;
                cell.auc += m.macro_auc_roc;
            }
        }
    }

    let n = config.repeats as f64;
    Ok(ComparisonTable {
        methods: METHODS.iter().map(|m| m.to_string()).collect(),
        rows: sources
            .iter()
            .zip(sums)
            .map(|((name, _), cells)| ComparisonRow {
                embedding: name.clone(),
                cells: cells
                    .into_iter()
                    .map(|c| Cell {
                        accuracy: c.accuracy / n,
                        auc: c.auc / n,
                    })
                    .collect(),
            })
            .collect(),
    })
}
