//! Logistic-regression baseline with one shared weight per token position.
//!
//! Token `p` of a post contributes a single feature, the mean of its word
//! vector's entries, so the parameter count per label is the number of
//! positions `P` plus a bias, independent of the embedding dimension.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::WordVectors;
use crate::text::{tokenize, tokenize_with_spans};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least two labels in the training data, found {0}")]
    TooFewLabels(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Token positions `P`.
    pub positions: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            positions: 64,
            learning_rate: 0.1,
            epochs: 500,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.positions == 0 {
            return Err(BaselineError::InvalidConfig("positions must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BaselineError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedWeightLogReg {
    pub labels: Vec<String>,
    /// `position_weights[label][position]`.
    pub position_weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl SharedWeightLogReg {
    pub fn positions(&self) -> usize {
        self.position_weights.first().map_or(0, Vec::len)
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.position_weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| b + w.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    pub fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.logits(features))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutcome {
    pub model: SharedWeightLogReg,
    pub final_loss: f64,
    /// Training loss before each epoch's update, then after the last one.
    pub trajectory: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn token_feature(token: &str, vectors: &WordVectors) -> f64 {
    let v = vectors.lookup(token);
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One feature per position: the mean entry of that token's vector, zero
/// past the end of the post.
pub fn featurize_post(post: &str, vectors: &WordVectors, positions: usize) -> Vec<f64> {
    let mut out: Vec<f64> = tokenize(post)
        .iter()
        .take(positions)
        .map(|t| token_feature(t, vectors))
        .collect();
    out.resize(positions, 0.0);
    out
}

fn cross_entropy(model: &SharedWeightLogReg, features: &[Vec<f64>], gold: &[usize]) -> f64 {
    features
        .iter()
        .zip(gold)
        .map(|(x, &y)| -model.probabilities(x)[y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / features.len() as f64
}

/// Softmax regression by full-batch gradient descent from all-zero weights.
///
/// `labels` fixes the output order; every gold label must be one of them.
pub fn train_baseline(
    dataset: &[(&str, &str)],
    labels: &[String],
    vectors: &WordVectors,
    config: &BaselineConfig,
) -> Result<BaselineOutcome, BaselineError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(BaselineError::EmptyDataset);
    }
    let gold: Vec<usize> = dataset
        .iter()
        .map(|(_, y)| {
            labels
                .iter()
                .position(|l| l == y)
                .ok_or_else(|| BaselineError::UnknownLabel(y.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let mut present = gold.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(BaselineError::TooFewLabels(present.len()));
    }

    let features: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(post, _)| featurize_post(post, vectors, config.positions))
        .collect();
    let k = labels.len();
    let p = config.positions;
    let n = dataset.len() as f64;
    let mut model = SharedWeightLogReg {
        labels: labels.to_vec(),
        position_weights: vec![vec![0.0; p]; k],
        biases: vec![0.0; k],
    };

    let mut trajectory = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        trajectory.push(cross_entropy(&model, &features, &gold));
        let mut gw = vec![vec![0.0; p]; k];
        let mut gb = vec![0.0; k];
        for (x, &y) in features.iter().zip(&gold) {
            let probs = model.probabilities(x);
            for c in 0..k {
                let err = probs[c] - (c == y) as u8 as f64;
                gb[c] += err;
                for (g, xi) in gw[c].iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        for c in 0..k {
            model.biases[c] -= config.learning_rate * gb[c] / n;
            for (w, g) in model.position_weights[c].iter_mut().zip(&gw[c]) {
                *w -= config.learning_rate * g / n;
            }
        }
    }
    let final_loss = cross_entropy(&model, &features, &gold);
    trajectory.push(final_loss);
    Ok(BaselineOutcome {
        model,
        final_loss,
        trajectory,
    })
}

/// Argmax label and the full probability vector.
pub fn predict_baseline(post: &str, model: &SharedWeightLogReg, vectors: &WordVectors) -> (String, Vec<f64>) {
    let probs = model.probabilities(&featurize_post(post, vectors, model.positions()));
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    (model.labels[best].clone(), probs)
}

/// Byte spans of maximal runs of tokens whose contribution to the predicted
/// label, `weight * feature`, exceeds `threshold`.
pub fn highlight(post: &str, model: &SharedWeightLogReg, vectors: &WordVectors, threshold: f64) -> Vec<(usize, usize)> {
    let (label, _) = predict_baseline(post, model, vectors);
    let c = model
        .labels
        .iter()
        .position(|l| *l == label)
        .expect("predicted label exists");
    let weights = &model.position_weights[c];

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut extend = false;
    for (i, (token, start, end)) in tokenize_with_spans(post).into_iter().enumerate() {
        let contribution = weights.get(i).map_or(0.0, |w| w * token_feature(&token, vectors));
        if contribution > threshold {
            match spans.last_mut() {
                Some(last) if extend => last.1 = end,
                _ => spans.push((start, end)),
            }
            extend = true;
        } else {
            extend = false;
        }
    }
    spans
}
