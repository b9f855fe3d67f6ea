//! Run configuration: a TOML file whose every field has a default, with
//! command-line flags applied on top.

use std::path::PathBuf;

use anyhow::{Context, Result};
use pkil::artifact::sha256_hex;
use pkil::baseline::BaselineConfig;
use pkil::embeddings::EmbeddingConfig;
use pkil::eval::SyntheticConfig;
use pkil::model::FitConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub tree: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub posts: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub test_fraction: f64,
    pub repeats: usize,
    /// Brute-force grid step for `train --oracle`.
    pub grid_step: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            test_fraction: 0.2,
            repeats: 1,
            grid_step: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds embeddings, synthetic data and splits; overrides per-section seeds.
    pub seed: u64,
    pub paths: Paths,
    pub embedding: EmbeddingConfig,
    pub model: FitConfig,
    pub baseline: BaselineConfig,
    pub synth: SyntheticConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            paths: Paths::default(),
            embedding: EmbeddingConfig::default(),
            model: FitConfig::default(),
            baseline: BaselineConfig::default(),
            synth: SyntheticConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Push the top-level seed into every section.
    pub fn propagate_seed(&mut self) {
        self.embedding.rng_seed = self.seed;
        self.synth.rng_seed = self.seed;
    }

    /// Short hash of the effective configuration, output path excluded so
    /// the same run written elsewhere carries the same header.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }
}
