//! Command implementations behind the `advtag` binary: train, tag, eval,
//! analyze, generate. Each command is an ordinary function so integration
//! tests can drive the full pipeline in-process.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use advtag::config::FileConfig;
use advtag::data::{
    self, read_conll_columns, read_conllu, to_iobes, write_conll_columns, write_conllu, Corpus,
    Vocab,
};
use advtag::embeddings::{init_char_table, init_word_table, load_pretrained};
use advtag::eval::{
    self, cluster_tightness, frequency_buckets, neighbor_accuracy, render_bucket_table,
    render_eval_summary, render_tightness_table, EmbeddingSpace,
};
use advtag::model::TaggerModel;
use advtag::trainer::{self, EpochRecord};
use rand::SeedableRng;

pub const BUILD_ID: &str = env!("ADVTAG_BUILD_ID");

/// Input file formats. `conll2000` reads token/chunk columns (0, 2),
/// `conll2003` token/NER columns (0, 3); `columns` uses explicit indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Conllu,
    Conll2000,
    Conll2003,
    Columns,
}

impl Format {
    fn resolve_columns(&self, token_col: usize, tag_col: usize) -> (usize, usize) {
        match self {
            Format::Conllu => (1, 3),
            Format::Conll2000 => (0, 2),
            Format::Conll2003 => (0, 3),
            Format::Columns => (token_col, tag_col),
        }
    }
}

pub fn read_corpus(
    format: Format,
    path: &Path,
    token_col: usize,
    tag_col: usize,
    iobes: bool,
) -> Result<Corpus> {
    let mut corpus = match format {
        Format::Conllu => read_conllu(path)?,
        other => {
            let (t, g) = other.resolve_columns(token_col, tag_col);
            read_conll_columns(path, t, g)?
        }
    };
    if iobes {
        for sentence in &mut corpus.sentences {
            let tags: Vec<String> = sentence.tags().map(str::to_string).collect();
            let converted = to_iobes(&tags)?;
            for (token, tag) in sentence.tokens.iter_mut().zip(converted) {
                token.tag = tag;
            }
        }
    }
    Ok(corpus)
}

pub fn render_corpus(format: Format, corpus: &Corpus, token_col: usize, tag_col: usize) -> String {
    match format {
        Format::Conllu => write_conllu(corpus),
        other => {
            let (t, g) = other.resolve_columns(token_col, tag_col);
            write_conll_columns(corpus, t, g)
        }
    }
}

/// Everything needed to reproduce a training run, written next to its
/// outputs. Wall-clock timing is informational; logs and checkpoints from
/// reruns of the same manifest are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub build_id: String,
    pub config: FileConfig,
    pub format: Format,
    pub token_col: usize,
    pub tag_col: usize,
    pub iobes: bool,
    pub train_path: String,
    pub dev_path: String,
    pub embeddings_path: Option<String>,
    pub checkpoint_path: String,
    pub log_path: String,
    /// Order-preserving gradient reduction keeps even multi-threaded runs
    /// deterministic.
    pub deterministic: bool,
    pub wall_clock_seconds: f64,
    pub epochs_run: usize,
    pub best_dev_accuracy: f64,
    pub best_dev_nll: f64,
}

/// Resolved inputs for `cmd_train`.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: FileConfig,
    pub format: Format,
    pub token_col: usize,
    pub tag_col: usize,
    pub iobes: bool,
    pub train_path: PathBuf,
    pub dev_path: PathBuf,
    pub embeddings_path: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl TrainOptions {
    pub fn new(config: FileConfig, train: PathBuf, dev: PathBuf, out_dir: PathBuf) -> Self {
        TrainOptions {
            config,
            format: Format::Conllu,
            token_col: 0,
            tag_col: 1,
            iobes: false,
            train_path: train,
            dev_path: dev,
            embeddings_path: None,
            out_dir,
        }
    }

    pub fn from_manifest(manifest: &RunManifest, out_dir: PathBuf) -> Self {
        TrainOptions {
            config: manifest.config.clone(),
            format: manifest.format,
            token_col: manifest.token_col,
            tag_col: manifest.tag_col,
            iobes: manifest.iobes,
            train_path: PathBuf::from(&manifest.train_path),
            dev_path: PathBuf::from(&manifest.dev_path),
            embeddings_path: manifest.embeddings_path.as_ref().map(PathBuf::from),
            out_dir,
        }
    }
}

/// Trains a model and writes `checkpoint.json`, `epochs.jsonl` and
/// `manifest.json` into the output directory.
pub fn cmd_train(opts: &TrainOptions) -> Result<RunManifest> {
    let started = Instant::now();
    let cfg = &opts.config;
    let train_cfg = cfg.train_config()?;
    let adv_cfg = cfg.adv_config();

    let train_corpus = read_corpus(opts.format, &opts.train_path, opts.token_col, opts.tag_col, opts.iobes)
        .with_context(|| format!("reading training data {}", opts.train_path.display()))?;
    let dev_corpus = read_corpus(opts.format, &opts.dev_path, opts.token_col, opts.tag_col, opts.iobes)
        .with_context(|| format!("reading development data {}", opts.dev_path.display()))?;

    let vocab = Vocab::build(&train_corpus, cfg.min_count)?;
    let arch = cfg.architecture(vocab.tag_count())?;
    log::info!(
        "vocab: {} words, {} chars, {} tags; adversarial: {}",
        vocab.word_count(),
        vocab.char_count(),
        vocab.tag_count(),
        adv_cfg.enabled
    );

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let word_table = match &opts.embeddings_path {
        Some(path) => load_pretrained(path, &vocab, arch.word_dim, &mut rng)
            .with_context(|| format!("loading pretrained embeddings {}", path.display()))?,
        None => init_word_table(&vocab, arch.word_dim, &mut rng),
    };
    let char_table = init_char_table(&vocab, arch.char_dim, train_cfg.char_freq_weighting, &mut rng);
    let mut model = TaggerModel::new(arch, vocab, word_table, char_table, &mut rng)?;

    let outcome = trainer::train(&mut model, &train_corpus, &dev_corpus, &train_cfg, &adv_cfg, rng)?;

    fs::create_dir_all(&opts.out_dir)
        .with_context(|| format!("creating {}", opts.out_dir.display()))?;
    let checkpoint_path = opts.out_dir.join("checkpoint.json");
    outcome.best_model.save(&checkpoint_path)?;
    let log_path = opts.out_dir.join("epochs.jsonl");
    fs::write(&log_path, render_epoch_log(&outcome.log)?)
        .with_context(|| format!("writing {}", log_path.display()))?;

    let manifest = RunManifest {
        build_id: BUILD_ID.to_string(),
        config: cfg.clone(),
        format: opts.format,
        token_col: opts.token_col,
        tag_col: opts.tag_col,
        iobes: opts.iobes,
        train_path: opts.train_path.display().to_string(),
        dev_path: opts.dev_path.display().to_string(),
        embeddings_path: opts.embeddings_path.as_ref().map(|p| p.display().to_string()),
        checkpoint_path: checkpoint_path.display().to_string(),
        log_path: log_path.display().to_string(),
        deterministic: true,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        epochs_run: outcome.epochs_run,
        best_dev_accuracy: outcome.best_dev_accuracy,
        best_dev_nll: outcome.best_dev_nll,
    };
    let manifest_path = opts.out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    log::info!(
        "finished {} epochs in {:.1}s; best dev accuracy {:.4}",
        manifest.epochs_run,
        manifest.wall_clock_seconds,
        manifest.best_dev_accuracy
    );
    Ok(manifest)
}

pub fn render_epoch_log(log: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for record in log {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Tags an input corpus, writing it back in the input's column format.
pub fn cmd_tag(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    format: Format,
    token_col: usize,
    tag_col: usize,
) -> Result<()> {
    let model = TaggerModel::load(checkpoint)?;
    let corpus = read_corpus(format, input, token_col, tag_col, false)?;
    let tagged = model.tag_corpus(&corpus)?;
    fs::write(output, render_corpus(format, &tagged, token_col, tag_col))
        .with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

/// Which analyses `cmd_eval` runs beyond token/sentence accuracy.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalFlags {
    pub buckets: bool,
    pub neighbors: bool,
    pub tightness: bool,
    pub f1: bool,
    pub f1_scheme: Option<data::TagScheme>,
}

impl EvalFlags {
    pub fn all(scheme: Option<data::TagScheme>) -> Self {
        EvalFlags { buckets: true, neighbors: true, tightness: true, f1: scheme.is_some(), f1_scheme: scheme }
    }
}

/// Tags the gold corpus with the checkpoint and writes the requested
/// reports: line-delimited records to `report_path`, aligned text tables to
/// stdout.
pub fn cmd_eval(
    checkpoint: &Path,
    gold_path: &Path,
    report_path: &Path,
    format: Format,
    token_col: usize,
    tag_col: usize,
    iobes: bool,
    flags: &EvalFlags,
) -> Result<()> {
    let model = TaggerModel::load(checkpoint)?;
    let gold = read_corpus(format, gold_path, token_col, tag_col, iobes)?;
    if gold.is_empty() {
        bail!("gold corpus {} is empty", gold_path.display());
    }
    if gold.sentences.iter().any(|s| s.tokens.iter().any(|t| t.tag == "_")) {
        bail!(
            "gold corpus {} has placeholder tags; evaluation and tightness need gold tags",
            gold_path.display()
        );
    }
    let predicted = model.tag_corpus(&gold)?;

    let scheme = if flags.f1 { flags.f1_scheme.or(Some(data::TagScheme::Iobes)) } else { None };
    let report = eval::evaluate(&gold, &predicted, scheme)?;

    let mut records = Vec::new();
    records.push(serde_json::json!({ "record": "eval", "body": &report }));
    let mut tables = render_eval_summary(&report);

    if flags.buckets {
        let buckets = frequency_buckets(&model.vocab, &gold, &predicted)?;
        tables.push_str("\nAccuracy by training frequency\n");
        tables.push_str(&render_bucket_table("Accuracy", &buckets));
        records.push(serde_json::json!({ "record": "buckets", "body": &buckets }));
    }
    if flags.neighbors {
        let neighbors = neighbor_accuracy(&model.vocab, &gold, &predicted)?;
        tables.push_str("\nNeighbor accuracy by center-word training frequency\n");
        tables.push_str(&render_bucket_table("Accuracy", &neighbors));
        records.push(serde_json::json!({ "record": "neighbors", "body": &neighbors }));
    }
    if flags.tightness {
        let stats = model.stats();
        let tightness = cluster_tightness(
            &model.word_table,
            &stats.word,
            &model.vocab,
            &gold,
            EmbeddingSpace::Normalized,
        )?;
        tables.push_str("\nEmbedding cluster tightness (cosine)\n");
        tables.push_str(&render_tightness_table(&tightness));
        records.push(serde_json::json!({ "record": "tightness", "body": &tightness }));
    }

    let mut jsonl = String::new();
    for record in &records {
        jsonl.push_str(&serde_json::to_string(record)?);
        jsonl.push('\n');
    }
    fs::write(report_path, jsonl)
        .with_context(|| format!("writing {}", report_path.display()))?;
    print!("{}", tables);
    Ok(())
}

/// Generates a synthetic HMM corpus. With `splits`, writes
/// `train.conllu` / `dev.conllu` / `test.conllu`; otherwise one
/// `corpus.conllu`.
#[allow(clippy::too_many_arguments)]
pub fn cmd_generate(
    out_dir: &Path,
    tags: usize,
    lexicon: usize,
    sentences: usize,
    max_len: usize,
    seed: u64,
    splits: Option<(usize, usize, usize)>,
) -> Result<()> {
    let spec = advtag::synthetic::HmmSpec::zipfian(tags, lexicon, seed);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    match splits {
        Some((n_train, n_dev, n_test)) => {
            let total = n_train + n_dev + n_test;
            if total > sentences {
                return Err(anyhow!(
                    "splits {}+{}+{} exceed --sentences {}",
                    n_train,
                    n_dev,
                    n_test,
                    sentences
                ));
            }
            let corpus = spec.generate(total, max_len)?;
            let mut remaining = corpus.sentences;
            let rest = remaining.split_off(n_train);
            let train = Corpus { sentences: remaining };
            let mut rest2 = rest;
            let test_sentences = rest2.split_off(n_dev);
            let dev = Corpus { sentences: rest2 };
            let test = Corpus { sentences: test_sentences };
            for (name, part) in
                [("train.conllu", &train), ("dev.conllu", &dev), ("test.conllu", &test)]
            {
                fs::write(out_dir.join(name), write_conllu(part))?;
            }
        }
        None => {
            let corpus = spec.generate(sentences, max_len)?;
            fs::write(out_dir.join("corpus.conllu"), write_conllu(&corpus))?;
        }
    }
    Ok(())
}
