mod config;
mod error;
mod manifest;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use moldapt::chemspace::{ClusterMethod, SplitPolicy};
use moldapt::downstream::{ForestConfig, MetricName};
use moldapt::encoder::{EncoderConfig, LnPlacement, Pooling};
use moldapt::features::{DEFAULT_NBITS, DEFAULT_RADIUS};
use moldapt::objectives::{ClVariant, Objective, TrainConfig};
use moldapt::tokenizer::{Vocabulary, DESK_VOCAB_SIZE};
use moldapt::toy::ToyConfig;

use config::*;
use error::{classify, config_err, Kind, KindExt};
use manifest::{execute, replay, Manifest};
use stages::*;

#[derive(Parser)]
#[command(name = "moldapt", version, about = "Molecular encoder pre-training, domain adaptation and evaluation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Out {
    /// Output directory; must be absent or empty.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    /// CSV with `smiles`, `target` and optionally `id` columns.
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset TOML; defaults to the CSV path with a `.toml` extension.
    #[arg(long)]
    dataset_config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus and labeled dataset.
    Toy {
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        opts: ToyOpts,
    },
    /// Train a WordPiece vocabulary.
    TokenizerTrain {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        opts: TokenizerOpts,
    },
    /// Cluster a corpus and sample the same share of every cluster.
    Subset {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        opts: SubsetOpts,
    },
    /// Train an encoder from scratch.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        encoder: EncoderOpts,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Continue training a checkpoint on domain molecules.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Unlabeled domain corpus.
        #[arg(long, conflicts_with = "dataset")]
        corpus: Option<PathBuf>,
        /// Labeled dataset whose molecules (censored included) form the corpus.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        dataset_config: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        train: TrainOpts,
    },
    /// Write pooled embeddings of a dataset.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        opts: EmbedOpts,
    },
    /// Repeated k-fold random-forest evaluation.
    Evaluate {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        opts: EvaluateOpts,
    },
    /// ANOVA-RM, Tukey HSD and paired t-tests across models.
    Compare {
        /// Record CSVs written by `evaluate`.
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<PathBuf>,
        /// Comma-separated model names; defaults to all, in record order.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[command(flatten)]
        out: Out,
        #[command(flatten)]
        opts: CompareOpts,
    },
    /// Significance reports for every metric.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        records: Vec<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Rerun a stage from its manifest and compare outputs bitwise.
    Replay {
        manifest: PathBuf,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct FeatureArgs {
    /// Embed with this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Embeddings CSV written by `embed`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Reference descriptors.
    #[arg(long)]
    descriptors: bool,
    /// Morgan fingerprint bits.
    #[arg(long)]
    fingerprint: bool,
}

fn existing(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p)
        .with_context(|| format!("{} does not exist", p.display()))
        .kind(Kind::Config)
}

fn dataset_ref(csv: &Path, cfg: Option<&Path>) -> Result<DatasetRef> {
    let config = cfg.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("toml"));
    Ok(DatasetRef {
        csv: existing(csv)?,
        config: existing(&config)?,
    })
}

fn check_unit(what: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(config_err(format!("{what} must lie in [0, 1], got {v}")))
    }
}

fn encoder_config(o: &EncoderOpts, vocab_size: usize, seed: u64) -> Result<EncoderConfig> {
    let preset = o.preset.as_deref().unwrap_or("desk");
    let base = EncoderConfig::preset(preset).ok_or_else(|| config_err(format!("unknown encoder preset `{preset}`")))?;
    let ln_placement = match &o.ln_placement {
        Some(s) => parse_name::<LnPlacement>("layer-norm placement", s)?,
        None => base.ln_placement,
    };
    Ok(EncoderConfig {
        layers: o.layers.unwrap_or(base.layers),
        heads: o.heads.unwrap_or(base.heads),
        hidden_dim: o.hidden_dim.unwrap_or(base.hidden_dim),
        ff_dim: o.ff_dim.unwrap_or(base.ff_dim),
        max_len: o.max_len.unwrap_or(base.max_len),
        vocab_size,
        dropout_rate: check_unit("dropout_rate", o.dropout_rate.unwrap_or(base.dropout_rate))?,
        head_dropout: check_unit("head_dropout", o.head_dropout.unwrap_or(base.head_dropout))?,
        ln_placement,
        init_std: o.init_std.unwrap_or(base.init_std),
        seed,
    })
}

fn train_config(o: &TrainOpts, seed: u64) -> Result<TrainConfig> {
    let objective = parse_name::<Objective>("objective", o.objective.as_deref().unwrap_or("mlm"))?;
    let mut tc = TrainConfig::new(objective);
    tc.seed = seed;
    tc.epochs = o.epochs.unwrap_or(tc.epochs);
    tc.batch_size = o.batch_size.unwrap_or(tc.batch_size);
    if tc.batch_size == 0 {
        return Err(config_err("batch_size must be positive"));
    }
    tc.adam.lr = o.lr.unwrap_or(tc.adam.lr);
    if !(tc.adam.lr > 0.0 && tc.adam.lr.is_finite()) {
        return Err(config_err(format!("lr must be positive, got {}", tc.adam.lr)));
    }
    if let Some(v) = &o.cl_variant {
        tc.cl_variant = parse_name::<ClVariant>("contrastive variant", v)?;
    }
    if let Some(r) = o.mask_rate {
        tc.masking.rate = check_unit("mask_rate", r)?;
    }
    Ok(tc)
}

fn pooling(s: Option<&str>) -> Result<Pooling> {
    parse_name("pooling", s.unwrap_or("cls"))
}

fn resolve(cmd: &Command, file: &FileConfig) -> Result<(Stage, PathBuf)> {
    let seed_or = |s: Option<u64>| s.or(file.seed).unwrap_or(0);
    Ok(match cmd {
        Command::Toy { out, opts } => {
            let o = opts.or(&file.toy);
            let d = ToyConfig::default();
            let cfg = ToyConfig {
                n_dataset: o.n_dataset.unwrap_or(d.n_dataset),
                n_corpus: o.n_corpus.unwrap_or(d.n_corpus),
                noise: o.noise.unwrap_or(d.noise),
                censor_quantile: check_unit("censor_quantile", o.censor_quantile.unwrap_or(d.censor_quantile))?,
                seed: seed_or(o.seed),
            };
            (Stage::Toy(cfg), out.out.clone())
        }
        Command::TokenizerTrain { corpus, out, opts } => {
            let o = opts.or(&file.tokenizer);
            let p = TokenizerParams {
                corpus: existing(corpus)?,
                vocab_size: o.vocab_size.unwrap_or(DESK_VOCAB_SIZE),
                min_frequency: o.min_frequency.unwrap_or(1),
            };
            (Stage::TokenizerTrain(p), out.out.clone())
        }
        Command::Subset { corpus, out, opts } => {
            let o = opts.or(&file.subset);
            let fraction = o.fraction.ok_or_else(|| config_err("subset needs --fraction"))?;
            let p = SubsetParams {
                corpus: existing(corpus)?,
                fraction: check_unit("fraction", fraction)?,
                threshold: check_unit("threshold", o.threshold.unwrap_or(0.6))?,
                method: parse_name::<ClusterMethod>("clustering method", o.method.as_deref().unwrap_or("bitbirch_like"))?,
                seed: seed_or(o.seed),
            };
            (Stage::Subset(p), out.out.clone())
        }
        Command::Pretrain { corpus, vocab, out, encoder, train } => {
            let vocab = existing(vocab)?;
            let v = Vocabulary::load(&vocab).kind(Kind::Data)?;
            let tc = train_config(&train.or(&file.pretrain), seed_or(train.seed.or(file.pretrain.seed)))?;
            let p = PretrainParams {
                corpus: existing(corpus)?,
                encoder: encoder_config(&encoder.or(&file.encoder), v.len(), tc.seed)?,
                vocab,
                train: tc,
            };
            (Stage::Pretrain(p), out.out.clone())
        }
        Command::Adapt { checkpoint, corpus, dataset, dataset_config, out, train } => {
            let domain = match (corpus, dataset) {
                (Some(c), None) => DomainCorpus::Corpus(existing(c)?),
                (None, Some(d)) => DomainCorpus::Dataset(dataset_ref(d, dataset_config.as_deref())?),
                _ => return Err(config_err("adapt needs exactly one of --corpus or --dataset")),
            };
            let p = AdaptParams {
                checkpoint: existing(checkpoint)?,
                domain,
                train: train_config(&train.or(&file.adapt), seed_or(train.seed.or(file.adapt.seed)))?,
            };
            (Stage::Adapt(p), out.out.clone())
        }
        Command::Embed { checkpoint, dataset, out, opts } => {
            let o = opts.or(&file.embed);
            let p = EmbedParams {
                checkpoint: existing(checkpoint)?,
                dataset: dataset_ref(&dataset.dataset, dataset.dataset_config.as_deref())?,
                pooling: pooling(o.pooling.as_deref())?,
            };
            (Stage::Embed(p), out.out.clone())
        }
        Command::Evaluate { dataset, features, out, opts } => {
            let o = opts.or(&file.evaluate);
            let features = if let Some(c) = &features.checkpoint {
                FeatureSource::Checkpoint {
                    path: existing(c)?,
                    pooling: pooling(o.pooling.as_deref())?,
                }
            } else if let Some(e) = &features.embeddings {
                FeatureSource::Embeddings { path: existing(e)? }
            } else if features.descriptors {
                FeatureSource::Descriptors
            } else {
                FeatureSource::Fingerprint {
                    radius: DEFAULT_RADIUS,
                    nbits: DEFAULT_NBITS,
                }
            };
            let d = ForestConfig::default();
            let forest = ForestConfig {
                n_trees: o.n_trees.unwrap_or(d.n_trees),
                max_depth: o.max_depth.or(d.max_depth),
                min_samples_split: o.min_samples_split.unwrap_or(d.min_samples_split),
                max_features: o.max_features.or(d.max_features),
                bootstrap: d.bootstrap,
            };
            let p = EvaluateParams {
                dataset: dataset_ref(&dataset.dataset, dataset.dataset_config.as_deref())?,
                model: o.model.clone().ok_or_else(|| config_err("evaluate needs --model"))?,
                features,
                splits: parse_name::<SplitPolicy>("split policy", o.splits.as_deref().unwrap_or("random"))?,
                folds: o.folds.unwrap_or(5),
                repeats: o.repeats.unwrap_or(5),
                threshold: check_unit("threshold", o.threshold.unwrap_or(0.6))?,
                seed: seed_or(o.seed),
                forest,
            };
            (Stage::Evaluate(p), out.out.clone())
        }
        Command::Compare { records, models, out, opts } => {
            let o = opts.or(&file.compare);
            let records = records.iter().map(|r| existing(r)).collect::<Result<Vec<_>>>()?;
            let metric = o.metric.as_deref().unwrap_or("MAE");
            let metric: MetricName = metric.parse().map_err(config_err)?;
            let models = if models.is_empty() { models_in(&records)? } else { models.clone() };
            (Stage::Compare(CompareParams { records, models, metric }), out.out.clone())
        }
        Command::Report { records, out } => {
            let records = records.iter().map(|r| existing(r)).collect::<Result<Vec<_>>>()?;
            (Stage::Report(ReportParams { records }), out.out.clone())
        }
        Command::Replay { .. } => unreachable!("replay is dispatched before resolution"),
    })
}

/// Model names in order of first appearance.
fn models_in(records: &[PathBuf]) -> Result<Vec<String>> {
    let mut names: Vec<String> = Vec::new();
    for p in records {
        let f = std::fs::File::open(p).kind(Kind::Data)?;
        for r in moldapt::downstream::records_from_csv(f).kind(Kind::Data)? {
            if !names.contains(&r.model) {
                names.push(r.model);
            }
        }
    }
    Ok(names)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")
            .kind(Kind::Config)?;
    }
    if let Command::Replay { manifest, out } = &cli.command {
        let m = Manifest::load(manifest)?;
        let diff = replay(&m, &out.out)?;
        if diff.is_identical() {
            println!("replay identical: {} files", m.outputs.len());
            return Ok(ExitCode::SUCCESS);
        }
        for (label, files) in [("missing", &diff.missing), ("extra", &diff.extra), ("changed", &diff.changed)] {
            for f in files {
                println!("{label}: {f}");
            }
        }
        return Ok(ExitCode::from(1));
    }
    let (stage, out) = resolve(&cli.command, &file)?;
    let m = execute(&stage, &out)?;
    log::info!("wrote {} files to {}", m.outputs.len() + 1, out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e).exit_code())
        }
    }
}
