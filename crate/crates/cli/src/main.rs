mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pkil::artifact::{
    header_line, peek_format, BaselineArtifact, ModelArtifact, VectorRef, BASELINE_FORMAT, MODEL_FORMAT,
};
use pkil::baseline::{highlight, predict_baseline, train_baseline};
use pkil::dataset::{load_examples, read_jsonl_file, save_examples, write_jsonl, write_jsonl_file, PostRecord};
use pkil::embeddings::{train_cbow, WordVectors, HEADER_PREFIX};
use pkil::eval::{
    brute_force_thresholds, generate_synthetic, run_comparison, ComparisonConfig, MAX_BRUTE_FORCE_QUESTIONS,
};
use pkil::kernels::KernelSpec;
use pkil::model::{fit, Classifier, ThresholdInit};
use pkil::text::tokenize;
use pkil::tree::ProcessTree;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "pkil",
    version,
    about = "Explainable text classification over expert question trees"
)]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (or directory for `synth` and `eval`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train CBOW word vectors on a corpus (one document per line).
    TrainEmbeddings {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit thresholds (or the baseline) on annotated posts.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = Method::Pkil)]
        method: Method,
        /// Also report the brute-force grid loss (trees with at most 3 questions).
        #[arg(long)]
        oracle: bool,
    },
    /// Predict labels for posts (JSON lines with `id` and `text`).
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        posts: Option<PathBuf>,
        /// Baseline models only: highlight tokens contributing above this.
        #[arg(long)]
        highlight: Option<f64>,
    },
    /// Predict and explain with the satisfied question path.
    Explain {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        posts: Option<PathBuf>,
    },
    /// Compare the baseline with both tree kernels on a held-out split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// `NAME=PATH` or `PATH`; repeatable. Without it, CBOW vectors are
        /// trained on the annotated posts.
        #[arg(long)]
        vectors: Vec<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Generate a synthetic annotated dataset for a tree.
    Synth {
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        annotators: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum)]
    kernel: Option<KernelKind>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    coef0: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Fragment window in sentences.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitKind>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKind {
    Cosine,
    Polynomial,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Midpoint,
    Annotations,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Method {
    Pkil,
    Baseline,
}

/// Tag library errors with their module name on the way into `anyhow`.
trait ModuleExt<T> {
    fn module(self) -> Result<T>;
}

impl<T, E: Into<pkil::Error>> ModuleExt<T> for std::result::Result<T, E> {
    fn module(self) -> Result<T> {
        self.map_err(|e| anyhow!(e.into()))
    }
}

/// Bad invocation rather than a failed run; exits with 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    let path = value
        .as_ref()
        .ok_or_else(|| UsageError(format!("missing --{flag} (or paths.{flag} in the config)")))?;
    if flag != "out" && !path.exists() {
        bail!("{} does not exist", path.display());
    }
    Ok(path)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

impl ModelArgs {
    fn apply(self, config: &mut RunConfig) {
        let m = &mut config.model;
        if let Some(kind) = self.kernel {
            m.kernel = match (kind, m.kernel) {
                (KernelKind::Cosine, _) => KernelSpec::Cosine,
                (KernelKind::Gaussian, KernelSpec::Gaussian { sigma }) => KernelSpec::Gaussian { sigma },
                (KernelKind::Gaussian, _) => KernelSpec::Gaussian { sigma: 1.0 },
                (KernelKind::Polynomial, k @ KernelSpec::Polynomial { .. }) => k,
                (KernelKind::Polynomial, _) => KernelSpec::Polynomial { degree: 2, coef0: 1.0 },
            };
        }
        match &mut m.kernel {
            KernelSpec::Gaussian { sigma } => set(sigma, self.sigma),
            KernelSpec::Polynomial { degree, coef0 } => {
                set(degree, self.degree);
                set(coef0, self.coef0);
            }
            KernelSpec::Cosine => {}
        }
        set(&mut m.newton.iterations, self.iterations);
        set(&mut m.newton.soft.tau, self.tau);
        set(&mut m.fragment_window, self.window);
        set(
            &mut m.init,
            self.init.map(|i| match i {
                InitKind::Midpoint => ThresholdInit::Midpoint,
                InitKind::Annotations => ThresholdInit::Annotations,
            }),
        );
    }
}

fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if i == 0 && line.starts_with(HEADER_PREFIX) {
            continue;
        }
        if !line.trim().is_empty() {
            docs.push(line);
        }
    }
    Ok(docs)
}

fn write_text(path: &Path, header: &str, body: &str) -> Result<()> {
    fs::write(path, format!("{header}\n{body}")).with_context(|| format!("writing {}", path.display()))
}

/// JSON lines to `--out`, or stdout.
fn emit<T: Serialize>(out: Option<&PathBuf>, header: &str, items: &[T]) -> Result<()> {
    match out {
        Some(p) => write_jsonl_file(p, Some(header), items).with_context(|| format!("writing {}", p.display())),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_jsonl(&mut lock, Some(header), items)?;
            lock.flush()?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PredictionRecord {
    id: String,
    label: String,
    scores: BTreeMap<String, f64>,
    fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    highlights: Option<Vec<(usize, usize)>>,
}

#[derive(Serialize)]
struct ExplanationRecord {
    id: String,
    #[serde(flatten)]
    explanation: pkil::model::Explanation,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_ref())?;
    set(&mut config.seed, cli.seed);
    set_path(&mut config.paths.out, cli.out);
    let paths = &mut config.paths;

    // Fold command flags into the config first so the hash covers them.
    match &cli.command {
        Command::TrainEmbeddings { corpus, .. } => set_path(&mut paths.corpus, corpus.clone()),
        Command::Train { data, vectors, .. } => {
            set_path(&mut paths.tree, data.tree.clone());
            set_path(&mut paths.annotations, data.annotations.clone());
            set_path(&mut paths.vectors, vectors.clone());
        }
        Command::Predict { model, posts, .. } | Command::Explain { model, posts } => {
            set_path(&mut paths.model, model.clone());
            set_path(&mut paths.posts, posts.clone());
        }
        Command::Eval { data, .. } => {
            set_path(&mut paths.tree, data.tree.clone());
            set_path(&mut paths.annotations, data.annotations.clone());
        }
        Command::Synth { tree, .. } => set_path(&mut paths.tree, tree.clone()),
    }
    match cli.command {
        Command::TrainEmbeddings { dim, epochs, .. } => {
            set(&mut config.embedding.dim, dim);
            set(&mut config.embedding.epochs, epochs);
            config.propagate_seed();
            cmd_train_embeddings(&config)
        }
        Command::Train {
            model, method, oracle, ..
        } => {
            model.apply(&mut config);
            config.propagate_seed();
            cmd_train(&config, method, oracle)
        }
        Command::Predict { highlight, .. } => {
            config.propagate_seed();
            cmd_predict(&config, highlight)
        }
        Command::Explain { .. } => {
            config.propagate_seed();
            cmd_explain(&config)
        }
        Command::Eval {
            vectors,
            repeats,
            test_fraction,
            model,
            ..
        } => {
            set(&mut config.eval.repeats, repeats);
            set(&mut config.eval.test_fraction, test_fraction);
            model.apply(&mut config);
            config.propagate_seed();
            cmd_eval(&config, &vectors)
        }
        Command::Synth {
            examples,
            annotators,
            noise,
            ..
        } => {
            set(&mut config.synth.n_examples, examples);
            set(&mut config.synth.n_annotators, annotators);
            set(&mut config.synth.label_noise, noise);
            config.propagate_seed();
            cmd_synth(&config)
        }
    }
}

fn cmd_train_embeddings(config: &RunConfig) -> Result<()> {
    let corpus_path = require(&config.paths.corpus, "corpus")?;
    let out = require(&config.paths.out, "out")?;
    let corpus: Vec<Vec<String>> = read_corpus(corpus_path)?.iter().map(|d| tokenize(d)).collect();
    let vectors = train_cbow(&corpus, &config.embedding).module()?;
    vectors
        .save(out, Some(&header_line(&config.hash())))
        .with_context(|| format!("writing {}", out.display()))?;
    log::info!(
        "{} vectors of dimension {} written to {}",
        vectors.len(),
        vectors.dim(),
        out.display()
    );
    Ok(())
}

fn load_tree(config: &RunConfig) -> Result<ProcessTree> {
    ProcessTree::from_file(require(&config.paths.tree, "tree")?).module()
}

fn cmd_train(config: &RunConfig, method: Method, oracle: bool) -> Result<()> {
    let tree = load_tree(config)?;
    let examples = load_examples(require(&config.paths.annotations, "annotations")?, &tree).module()?;
    let vectors_path = require(&config.paths.vectors, "vectors")?;
    let out = require(&config.paths.out, "out")?;
    let vectors = WordVectors::from_file(vectors_path).module()?;
    let vector_ref = VectorRef::new(vectors_path).module()?;
    let hash = config.hash();

    if method == Method::Baseline {
        let data: Vec<(&str, &str)> = examples
            .iter()
            .map(|e| (e.text.as_str(), e.gold_label.as_str()))
            .collect();
        let outcome = train_baseline(&data, tree.labels(), &vectors, &config.baseline).module()?;
        println!("final loss {:.9}", outcome.final_loss);
        return BaselineArtifact::new(outcome.model, vector_ref, &hash)
            .save(out)
            .module();
    }

    let (model, outcome) = fit(&tree, &examples, &vectors, &config.model).module()?;
    log::info!("initial loss {:.9}", outcome.initial_loss);
    for (i, l) in outcome.trajectory.iter().enumerate() {
        println!("iteration {} loss {:.9}", i + 1, l);
    }
    if oracle {
        if tree.num_questions() > MAX_BRUTE_FORCE_QUESTIONS {
            bail!("--oracle needs a tree with at most {MAX_BRUTE_FORCE_QUESTIONS} questions");
        }
        let dataset = Classifier::new(&model, &vectors).labeled_evidence(&examples).module()?;
        let (best, l) =
            brute_force_thresholds(&dataset, &model, config.eval.grid_step, &config.model.newton.soft).module()?;
        println!("oracle loss {l:.9} at {:?}", best.values);
    }
    ModelArtifact::new(&model, vector_ref, config.model.newton.soft, &hash)
        .save(out)
        .module()
}

fn load_posts(config: &RunConfig) -> Result<Vec<PostRecord>> {
    read_jsonl_file(require(&config.paths.posts, "posts")?).module()
}

fn cmd_predict(config: &RunConfig, threshold: Option<f64>) -> Result<()> {
    let model_path = require(&config.paths.model, "model")?;
    let posts = load_posts(config)?;
    let header = header_line(&config.hash());
    let records: Vec<PredictionRecord> = match peek_format(model_path).module()?.as_str() {
        MODEL_FORMAT => {
            if threshold.is_some() {
                bail!("--highlight applies to baseline models only");
            }
            let (_, model, vectors) = ModelArtifact::load_model(model_path).module()?;
            let classifier = Classifier::new(&model, &vectors);
            posts
                .iter()
                .map(|p| {
                    let pred = classifier.predict(&p.text);
                    PredictionRecord {
                        id: p.id.clone(),
                        scores: model.labels().iter().cloned().zip(pred.scores).collect(),
                        label: pred.label,
                        fallback: pred.fallback,
                        highlights: None,
                    }
                })
                .collect()
        }
        BASELINE_FORMAT => {
            let artifact = BaselineArtifact::load(model_path).module()?;
            let vectors = artifact.vectors.load(model_path).module()?;
            let model = &artifact.model;
            posts
                .iter()
                .map(|p| {
                    let (label, probs) = predict_baseline(&p.text, model, &vectors);
                    PredictionRecord {
                        id: p.id.clone(),
                        label,
                        scores: model.labels.iter().cloned().zip(probs).collect(),
                        fallback: false,
                        highlights: threshold.map(|t| highlight(&p.text, model, &vectors, t)),
                    }
                })
                .collect()
        }
        other => bail!("unknown artifact format {other:?}"),
    };
    emit(config.paths.out.as_ref(), &header, &records)
}

fn cmd_explain(config: &RunConfig) -> Result<()> {
    let model_path = require(&config.paths.model, "model")?;
    let posts = load_posts(config)?;
    let (_, model, vectors) = ModelArtifact::load_model(model_path).module()?;
    let classifier = Classifier::new(&model, &vectors);
    let records: Vec<ExplanationRecord> = posts
        .iter()
        .map(|p| ExplanationRecord {
            id: p.id.clone(),
            explanation: classifier.explain(&p.text),
        })
        .collect();
    if config.paths.out.is_some() {
        for r in &records {
            println!("{}: {}", r.id, r.explanation.rendering);
        }
    }
    emit(config.paths.out.as_ref(), &header_line(&config.hash()), &records)
}

fn cmd_eval(config: &RunConfig, vector_args: &[String]) -> Result<()> {
    let tree = load_tree(config)?;
    let examples = load_examples(require(&config.paths.annotations, "annotations")?, &tree).module()?;
    let out = require(&config.paths.out, "out")?;

    let mut sources = Vec::new();
    for arg in vector_args {
        let (name, path) = match arg.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(arg);
                let name = p
                    .file_stem()
                    .map_or_else(|| arg.clone(), |s| s.to_string_lossy().into_owned());
                (name, p)
            }
        };
        sources.push((name, WordVectors::from_file(&path).module()?));
    }
    if sources.is_empty() {
        let corpus: Vec<Vec<String>> = examples.iter().map(|e| tokenize(&e.text)).collect();
        sources.push(("cbow".to_string(), train_cbow(&corpus, &config.embedding).module()?));
    }

    let comparison = ComparisonConfig {
        test_fraction: config.eval.test_fraction,
        seed: config.seed,
        repeats: config.eval.repeats,
        baseline: config.baseline,
        pkil: config.model.clone(),
        ..ComparisonConfig::default()
    };
    let table = run_comparison(&examples, &tree, &sources, &comparison).module()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let header = header_line(&config.hash());
    write_text(&out.join("comparison.tsv"), &header, &table.to_tsv())?;
    write_text(&out.join("comparison.txt"), &header, &table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_synth(config: &RunConfig) -> Result<()> {
    let tree = load_tree(config)?;
    let out = require(&config.paths.out, "out")?;
    let examples = generate_synthetic(&config.synth, &tree).module()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let header = header_line(&config.hash());
    save_examples(out.join("annotations.jsonl"), Some(&header), &examples, &tree).module()?;
    let posts: Vec<PostRecord> = examples
        .iter()
        .map(|e| PostRecord {
            id: e.id.clone(),
            text: e.text.clone(),
        })
        .collect();
    write_jsonl_file(out.join("posts.jsonl"), Some(&header), &posts)?;
    let corpus: String = examples.iter().map(|e| format!("{}\n", e.text)).collect();
    write_text(&out.join("corpus.txt"), &header, &corpus)?;
    log::info!("{} examples written to {}", examples.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 1 } else { 2 })
        }
    }
}
