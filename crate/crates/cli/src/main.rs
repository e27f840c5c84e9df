use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use advtag_cli::{
    cmd_eval, cmd_generate, cmd_tag, cmd_train, load_manifest, EvalFlags, Format, TrainOptions,
};
use advtag::config::FileConfig;
use advtag::data::TagScheme;

#[derive(Parser)]
#[command(
    name = "advtag",
    version = advtag_cli::BUILD_ID,
    about = "BiLSTM-CRF sequence labeling with adversarial training"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Iobes,
    Iob2,
}

impl From<SchemeArg> for TagScheme {
    fn from(s: SchemeArg) -> TagScheme {
        match s {
            SchemeArg::Iobes => TagScheme::Iobes,
            SchemeArg::Iob2 => TagScheme::Iob2,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a tagger; writes checkpoint.json, epochs.jsonl and
    /// manifest.json to --out
    Train {
        /// TOML run configuration (required unless --from-manifest)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training corpus
        #[arg(long)]
        train: Option<PathBuf>,
        /// Development corpus for early stopping
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Conllu)]
        format: Format,
        /// Token column for --format columns
        #[arg(long, default_value_t = 0)]
        token_col: usize,
        /// Tag column for --format columns
        #[arg(long, default_value_t = 1)]
        tag_col: usize,
        /// Convert tags to the IOBES scheme on read
        #[arg(long)]
        iobes: bool,
        /// Pretrained word embeddings (text format: word v1 .. vd)
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Reproduce a previous run from its manifest
        #[arg(long)]
        from_manifest: Option<PathBuf>,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the perturbation scale
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the clean/adversarial mixing weight
        #[arg(long)]
        gamma: Option<f64>,
        /// Override adversarial_enabled
        #[arg(long)]
        adversarial: Option<bool>,
        /// Override worker thread count
        #[arg(long)]
        threads: Option<usize>,
        /// Override the epoch cap
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Tag a corpus with a trained checkpoint
    Tag {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Conllu)]
        format: Format,
        #[arg(long, default_value_t = 0)]
        token_col: usize,
        #[arg(long, default_value_t = 1)]
        tag_col: usize,
    },
    /// Evaluate a checkpoint against gold tags
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Destination for line-delimited report records
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Conllu)]
        format: Format,
        #[arg(long, default_value_t = 0)]
        token_col: usize,
        #[arg(long, default_value_t = 1)]
        tag_col: usize,
        #[arg(long)]
        iobes: bool,
        /// Accuracy bucketed by training frequency
        #[arg(long)]
        buckets: bool,
        /// Neighbor accuracy bucketed by center-word frequency
        #[arg(long)]
        neighbors: bool,
        /// Embedding cluster tightness per gold tag
        #[arg(long)]
        tightness: bool,
        /// Chunk precision/recall/F1
        #[arg(long)]
        f1: bool,
        /// Span scheme for --f1
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Run the full analysis suite (buckets, neighbors, tightness)
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Conllu)]
        format: Format,
        #[arg(long, default_value_t = 0)]
        token_col: usize,
        #[arg(long, default_value_t = 1)]
        tag_col: usize,
        #[arg(long)]
        iobes: bool,
        /// Also report chunk F1 in the given scheme
        #[arg(long, value_enum)]
        f1_scheme: Option<SchemeArg>,
    },
    /// Generate a synthetic HMM corpus in CoNLL-U format
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        tags: usize,
        #[arg(long, default_value_t = 500)]
        lexicon: usize,
        #[arg(long, default_value_t = 2400)]
        sentences: usize,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write train/dev/test files with these sizes, e.g. 2000,200,200
        #[arg(long)]
        splits: Option<String>,
    },
}

enum AppError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for AppError {
    fn from(e: anyhow::Error) -> Self {
        AppError::Runtime(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("ADVTAG_LOG", "info"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(message)) => {
            eprintln!("error: {}", message);
            eprintln!("run `advtag --help` for usage");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(error)) => {
            eprintln!("error: {:#}", error);
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Cmd::Train {
            config,
            train,
            dev,
            out,
            format,
            token_col,
            tag_col,
            iobes,
            embeddings,
            from_manifest,
            seed,
            alpha,
            gamma,
            adversarial,
            threads,
            max_epochs,
        } => {
            let mut opts = match from_manifest {
                Some(path) => {
                    let manifest = load_manifest(&path)
                        .map_err(|e| AppError::Usage(format!("cannot load manifest: {:#}", e)))?;
                    TrainOptions::from_manifest(&manifest, out)
                }
                None => {
                    let config_path = config.ok_or_else(|| {
                        AppError::Usage("--config is required (or use --from-manifest)".into())
                    })?;
                    let file_config = FileConfig::load(&config_path).map_err(|e| {
                        AppError::Usage(format!("cannot load config {}: {}", config_path.display(), e))
                    })?;
                    let train_path = train.ok_or_else(|| {
                        AppError::Usage("--train is required (or use --from-manifest)".into())
                    })?;
                    let dev_path = dev.ok_or_else(|| {
                        AppError::Usage("--dev is required (or use --from-manifest)".into())
                    })?;
                    let mut opts = TrainOptions::new(file_config, train_path, dev_path, out);
                    opts.format = format;
                    opts.token_col = token_col;
                    opts.tag_col = tag_col;
                    opts.iobes = iobes;
                    opts.embeddings_path = embeddings;
                    opts
                }
            };
            // flags take precedence over config-file keys
            if let Some(v) = seed {
                opts.config.seed = v;
            }
            if let Some(v) = alpha {
                opts.config.alpha = v;
            }
            if let Some(v) = gamma {
                opts.config.gamma = v;
            }
            if let Some(v) = adversarial {
                opts.config.adversarial_enabled = v;
            }
            if let Some(v) = threads {
                opts.config.threads = v;
            }
            if let Some(v) = max_epochs {
                opts.config.max_epochs = v;
            }
            cmd_train(&opts)?;
            Ok(())
        }
        Cmd::Tag { checkpoint, input, output, format, token_col, tag_col } => {
            cmd_tag(&checkpoint, &input, &output, format, token_col, tag_col)?;
            Ok(())
        }
        Cmd::Eval {
            checkpoint,
            gold,
            report,
            format,
            token_col,
            tag_col,
            iobes,
            buckets,
            neighbors,
            tightness,
            f1,
            scheme,
        } => {
            let flags = EvalFlags {
                buckets,
                neighbors,
                tightness,
                f1,
                f1_scheme: scheme.map(TagScheme::from),
            };
            cmd_eval(&checkpoint, &gold, &report, format, token_col, tag_col, iobes, &flags)?;
            Ok(())
        }
        Cmd::Analyze {
            checkpoint,
            gold,
            report,
            format,
            token_col,
            tag_col,
            iobes,
            f1_scheme,
        } => {
            let flags = EvalFlags::all(f1_scheme.map(TagScheme::from));
            cmd_eval(&checkpoint, &gold, &report, format, token_col, tag_col, iobes, &flags)?;
            Ok(())
        }
        Cmd::Generate { out, tags, lexicon, sentences, max_len, seed, splits } => {
            let parsed = match splits {
                Some(text) => {
                    let parts: Vec<usize> = text
                        .split(',')
                        .map(|p| p.trim().parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| {
                            AppError::Usage(format!("--splits expects three integers, got {:?}", text))
                        })?;
                    if parts.len() != 3 {
                        return Err(AppError::Usage(format!(
                            "--splits expects three integers, got {:?}",
                            text
                        )));
                    }
                    Some((parts[0], parts[1], parts[2]))
                }
                None => None,
            };
            cmd_generate(&out, tags, lexicon, sentences, max_len, seed, parsed)?;
            Ok(())
        }
    }
}
