//! Word vectors and fragment representations.
//!
//! Word vectors come either from [`train_cbow`] (continuous bag of words with
//! negative sampling) or from a plain text file, one `token v1 .. vd` row per
//! line. A fragment is represented by concatenating the vectors of its first
//! `M` tokens, zero-padding to `M * d`, and scaling to unit length.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Fragment;

/// First-line marker of files written by this crate. Readers skip such a line.
pub const HEADER_PREFIX: &str = "#pkil";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("invalid embedding config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension { line: usize, expected: usize, found: usize },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: cannot parse {value:?} as a number")]
    Parse { line: usize, value: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negative_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    /// Tokens per fragment representation (`M`).
    pub max_tokens: usize,
    pub rng_seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 50,
            window: 5,
            negative_samples: 5,
            epochs: 15,
            learning_rate: 0.05,
            min_count: 2,
            max_tokens: 30,
            rng_seed: 1,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let positive = [
            ("dim", self.dim),
            ("window", self.window),
            ("negative_samples", self.negative_samples),
            ("epochs", self.epochs),
            ("min_count", self.min_count),
            ("max_tokens", self.max_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(EmbeddingError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EmbeddingError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A token → vector table with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl WordVectors {
    /// Build from `(token, vector)` rows. All vectors must have length `dim`.
    pub fn new(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::InvalidConfig("dim must be positive".into()));
        }
        let mut vectors = WordVectors {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        };
        for (line, (token, v)) in rows.into_iter().enumerate() {
            vectors.push(line + 1, token, &v)?;
        }
        Ok(vectors)
    }

    fn push(&mut self, line: usize, token: String, v: &[f64]) -> Result<(), EmbeddingError> {
        if v.len() != self.dim {
            return Err(EmbeddingError::Dimension {
                line,
                expected: self.dim,
                found: v.len(),
            });
        }
        if self.index.contains_key(&token) {
            return Err(EmbeddingError::DuplicateToken { line, token });
        }
        self.index.insert(token.clone(), self.words.len());
        self.words.push(token);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Vector for `token`, with a fallback for out-of-vocabulary tokens.
    ///
    /// Unknown tokens are chunked greedily from the left: at each position the
    /// longest vocabulary word that prefixes the remaining string is taken,
    /// and if none does, one character is skipped. The result is the mean of
    /// the matched words, or the zero vector when nothing matched.
    pub fn lookup(&self, token: &str) -> Cow<'_, [f64]> {
        if let Some(v) = self.get(token) {
            return Cow::Borrowed(v);
        }
        let mut sum = vec![0.0; self.dim];
        let mut matched = 0usize;
        let mut rest = token;
        while !rest.is_empty() {
            let ends: Vec<usize> = rest.char_indices().map(|(i, c)| i + c.len_utf8()).collect();
            let hit = ends
                .iter()
                .rev()
                .find_map(|&end| self.get(&rest[..end]).map(|v| (end, v)));
            match hit {
                Some((end, v)) => {
                    for (s, x) in sum.iter_mut().zip(v) {
                        *s += x;
                    }
                    matched += 1;
                    rest = &rest[end..];
                }
                None => rest = &rest[ends[0]..],
            }
        }
        if matched > 1 {
            let n = matched as f64;
            sum.iter_mut().for_each(|s| *s /= n);
        }
        Cow::Owned(sum)
    }

    /// Write in the text format read by [`load_vectors`].
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            out.write_all(word.as_bytes())?;
            for x in self.row(i) {
                write!(out, " {x}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, header: Option<&str>) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        if let Some(h) = header {
            writeln!(out, "{h}")?;
        }
        self.write(&mut out)?;
        out.flush()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        load_vectors(BufReader::new(File::open(path)?))
    }
}

/// Read the word-vector text format: `token v1 ... vd` per line, no header.
///
/// The dimension is taken from the first row. Blank lines and a leading
/// [`HEADER_PREFIX`] line are skipped.
pub fn load_vectors<R: BufRead>(reader: R) -> Result<WordVectors, EmbeddingError> {
    let mut vectors: Option<WordVectors> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 && line.starts_with(HEADER_PREFIX) {
            continue;
        }
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| EmbeddingError::Parse {
                    line: lineno,
                    value: p.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let table = match vectors.as_mut() {
            Some(t) => t,
            None => {
                if values.is_empty() {
                    return Err(EmbeddingError::Dimension {
                        line: lineno,
                        expected: 1,
                        found: 0,
                    });
                }
                vectors.insert(WordVectors::new(values.len(), [])?)
            }
        };
        table.push(lineno, token.to_string(), &values)?;
    }
    vectors.ok_or(EmbeddingError::EmptyVocabulary)
}

/// A unit-length (or all-zero) concatenated fragment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentRepresentation {
    pub vector: Vec<f64>,
    /// Euclidean norm before scaling.
    pub norm: f64,
}

impl FragmentRepresentation {
    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }
}

/// Concatenate the vectors of the first `max_tokens` tokens, zero-pad to
/// `max_tokens * d` and scale to unit length unless the result is all zeros.
pub fn embed_tokens(tokens: &[String], vectors: &WordVectors, max_tokens: usize) -> FragmentRepresentation {
    let d = vectors.dim();
    let mut vector = vec![0.0; max_tokens * d];
    for (slot, token) in vector.chunks_exact_mut(d).zip(tokens) {
        slot.copy_from_slice(&vectors.lookup(token));
    }
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        vector.iter_mut().for_each(|x| *x /= norm);
    }
    FragmentRepresentation { vector, norm }
}

pub fn embed_fragment(fragment: &Fragment, vectors: &WordVectors, max_tokens: usize) -> FragmentRepresentation {
    embed_tokens(&fragment.tokens, vectors, max_tokens)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unigram^0.75 sampler over vocabulary ids.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(counts: &[usize]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NegativeSampler { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let r = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= r)
            .min(self.cumulative.len() - 1)
    }
}

/// Train CBOW word vectors with negative sampling.
///
/// Each position's context (a randomly shrunk window, as in word2vec) is
/// averaged and trained to score the centre word above `negative_samples`
/// draws from the unigram^0.75 distribution. The learning rate decays
/// linearly. Single-threaded, so a fixed seed gives bit-identical vectors.
pub fn train_cbow(corpus: &[Vec<String>], config: &EmbeddingConfig) -> Result<WordVectors, EmbeddingError> {
    config.validate()?;
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(EmbeddingError::EmptyCorpus);
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in corpus.iter().flatten() {
        *counts.entry(token.as_str()).or_insert(0) += 1;
    }
    let mut vocab: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= config.min_count).collect();
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyVocabulary);
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let ids: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|t| ids.get(t.as_str()).copied()).collect())
        .collect();

    let d = config.dim;
    let n = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut input: Vec<f64> = (0..n * d).map(|_| (rng.gen::<f64>() - 0.5) / d as f64).collect();
    let mut output = vec![0.0; n * d];
    let sampler = NegativeSampler::new(&vocab.iter().map(|&(_, c)| c).collect::<Vec<_>>());

    let words_per_epoch: usize = sentences.iter().map(Vec::len).sum();
    let total = (words_per_epoch * config.epochs) as f64 + 1.0;
    let mut processed = 0usize;
    let mut hidden = vec![0.0; d];
    let mut grad = vec![0.0; d];

    for _ in 0..config.epochs {
        for sentence in &sentences {
            for (pos, &center) in sentence.iter().enumerate() {
                let alpha = config.learning_rate * (1.0 - processed as f64 / total).max(1e-4);
                processed += 1;

                let reach = config.window - rng.gen_range(0..config.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(sentence.len() - 1);
                let context: Vec<usize> = (lo..=hi).filter(|&j| j != pos).map(|j| sentence[j]).collect();
                if context.is_empty() {
                    continue;
                }

                hidden.iter_mut().for_each(|h| *h = 0.0);
                for &c in &context {
                    for (h, x) in hidden.iter_mut().zip(&input[c * d..(c + 1) * d]) {
                        *h += x;
                    }
                }
                let inv = 1.0 / context.len() as f64;
                hidden.iter_mut().for_each(|h| *h *= inv);
                grad.iter_mut().for_each(|g| *g = 0.0);

                for k in 0..=config.negative_samples {
                    let (target, label) = if k == 0 {
                        (center, 1.0)
                    } else {
                        let t = sampler.sample(&mut rng);
                        if t == center {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let out = &mut output[target * d..(target + 1) * d];
                    let score: f64 = hidden.iter().zip(out.iter()).map(|(h, o)| h * o).sum();
                    let g = (label - sigmoid(score)) * alpha;
                    for ((e, o), h) in grad.iter_mut().zip(out.iter_mut()).zip(&hidden) {
                        *e += g * *o;
                        *o += g * h;
                    }
                }
                for &c in &context {
                    for (x, e) in input[c * d..(c + 1) * d].iter_mut().zip(&grad) {
                        *x += e;
                    }
                }
            }
        }
    }

    let rows = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.to_string(), input[i * d..(i + 1) * d].to_vec()));
    WordVectors::new(d, rows)
}
