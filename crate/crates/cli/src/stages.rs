//! Resolved stage parameters and their runners. A `Stage` value is the
//! full configuration snapshot stored in a manifest; running it twice on
//! the same inputs writes identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use moldapt::chemspace::{butina_cluster, leader_cluster, proportional_subset, ClusterMethod, SplitPolicy};
use moldapt::downstream::{
    build_split_plan, embed_dataset, records_from_csv, records_to_csv, run_repeated_cv, DatasetConfig, DownstreamError,
    ForestConfig, LabeledDataset, MetricName, MetricRecord,
};
use moldapt::encoder::{Checkpoint, EncoderConfig, EncoderError, Pooling};
use moldapt::features::{compute_descriptors, morgan_fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
use moldapt::molgraph::{ingest_corpus, parse_smiles, CorpusIngest};
use moldapt::objectives::{domain_adapt, pretrain, ObjectiveError, StepLog, TrainConfig};
use moldapt::stats::{paired_t, significance_report, PairedSample, StatsError, Tail};
use moldapt::tokenizer::{train_wordpiece, TokenizerError, Vocabulary};
use moldapt::toy::{toy_data, ToyConfig};

use crate::error::{Kind, KindExt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub csv: PathBuf,
    pub config: PathBuf,
}

impl DatasetRef {
    fn load(&self) -> Result<LabeledDataset> {
        let text = fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))
            .kind(Kind::Config)?;
        let cfg = DatasetConfig::from_toml(&text).kind(Kind::Config)?;
        LabeledDataset::from_csv(&self.csv, &cfg)
            .with_context(|| format!("loading {}", self.csv.display()))
            .kind(Kind::Data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerParams {
    pub corpus: PathBuf,
    pub vocab_size: usize,
    pub min_frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetParams {
    pub corpus: PathBuf,
    pub fraction: f64,
    pub threshold: f64,
    pub method: ClusterMethod,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainParams {
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainCorpus {
    /// One SMILES per line.
    Corpus(PathBuf),
    /// Every molecule of a labeled dataset, censored rows included.
    Dataset(DatasetRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptParams {
    pub checkpoint: PathBuf,
    pub domain: DomainCorpus,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedParams {
    pub checkpoint: PathBuf,
    pub dataset: DatasetRef,
    pub pooling: Pooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Checkpoint { path: PathBuf, pooling: Pooling },
    /// CSV written by `embed`.
    Embeddings { path: PathBuf },
    Descriptors,
    Fingerprint { radius: usize, nbits: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateParams {
    pub dataset: DatasetRef,
    pub model: String,
    pub features: FeatureSource,
    pub splits: SplitPolicy,
    pub folds: usize,
    pub repeats: usize,
    pub threshold: f64,
    pub seed: u64,
    pub forest: ForestConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareParams {
    pub records: Vec<PathBuf>,
    pub models: Vec<String>,
    pub metric: MetricName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub records: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case")]
pub enum Stage {
    Toy(ToyConfig),
    TokenizerTrain(TokenizerParams),
    Subset(SubsetParams),
    Pretrain(PretrainParams),
    Adapt(AdaptParams),
    Embed(EmbedParams),
    Evaluate(EvaluateParams),
    Compare(CompareParams),
    Report(ReportParams),
}

pub struct Outcome {
    pub seeds: BTreeMap<String, u64>,
    pub summary: Value,
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Toy(_) => "toy",
            Stage::TokenizerTrain(_) => "tokenizer-train",
            Stage::Subset(_) => "subset",
            Stage::Pretrain(_) => "pretrain",
            Stage::Adapt(_) => "adapt",
            Stage::Embed(_) => "embed",
            Stage::Evaluate(_) => "evaluate",
            Stage::Compare(_) => "compare",
            Stage::Report(_) => "report",
        }
    }

    /// Files and directories the stage reads.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let ds = |d: &DatasetRef| vec![d.csv.clone(), d.config.clone()];
        match self {
            Stage::Toy(_) => vec![],
            Stage::TokenizerTrain(p) => vec![p.corpus.clone()],
            Stage::Subset(p) => vec![p.corpus.clone()],
            Stage::Pretrain(p) => vec![p.corpus.clone(), p.vocab.clone()],
            Stage::Adapt(p) => {
                let mut v = vec![p.checkpoint.clone()];
                match &p.domain {
                    DomainCorpus::Corpus(c) => v.push(c.clone()),
                    DomainCorpus::Dataset(d) => v.extend(ds(d)),
                }
                v
            }
            Stage::Embed(p) => [vec![p.checkpoint.clone()], ds(&p.dataset)].concat(),
            Stage::Evaluate(p) => {
                let mut v = ds(&p.dataset);
                match &p.features {
                    FeatureSource::Checkpoint { path, .. } | FeatureSource::Embeddings { path } => v.push(path.clone()),
                    _ => {}
                }
                v
            }
            Stage::Compare(p) => p.records.clone(),
            Stage::Report(p) => p.records.clone(),
        }
    }

    pub fn run(&self, out: &Path) -> Result<Outcome> {
        match self {
            Stage::Toy(p) => run_toy(p, out),
            Stage::TokenizerTrain(p) => run_tokenizer(p, out),
            Stage::Subset(p) => run_subset(p, out),
            Stage::Pretrain(p) => run_pretrain(p, out),
            Stage::Adapt(p) => run_adapt(p, out),
            Stage::Embed(p) => run_embed(p, out),
            Stage::Evaluate(p) => run_evaluate(p, out),
            Stage::Compare(p) => run_compare(p, out),
            Stage::Report(p) => run_report(p, out),
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .kind(Kind::Data)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    write_file(path, text)
}

fn objective_kind(e: &ObjectiveError) -> Kind {
    match e {
        ObjectiveError::NonFinite(_) => Kind::Numeric,
        ObjectiveError::Encoder(EncoderError::InvalidConfig(_)) => Kind::Config,
        _ => Kind::Data,
    }
}

fn stats_kind(e: &StatsError) -> Kind {
    match e {
        StatsError::ZeroVarianceDifferences => Kind::Numeric,
        StatsError::InvalidArgument(_) => Kind::Config,
        _ => Kind::Data,
    }
}

/// Reads and validates a corpus, writing `rejected.csv` next to the
/// stage's other outputs.
fn load_corpus(path: &Path, out: &Path) -> Result<CorpusIngest> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading corpus {}", path.display()))
        .kind(Kind::Data)?;
    let ing = ingest_corpus(&text);
    let mut w = csv::Writer::from_path(out.join("rejected.csv")).kind(Kind::Data)?;
    w.write_record(["line", "smiles", "reason"]).kind(Kind::Data)?;
    for r in &ing.rejected {
        w.write_record([r.line.to_string().as_str(), &r.smiles, &r.reason]).kind(Kind::Data)?;
    }
    w.flush().kind(Kind::Data)?;
    if !ing.rejected.is_empty() {
        log::warn!("{}: rejected {} of {} lines", path.display(), ing.rejected.len(), ing.rejected.len() + ing.accepted.len());
    }
    if ing.accepted.is_empty() {
        return Err(anyhow::anyhow!("corpus {} has no valid molecules", path.display())).kind(Kind::Data);
    }
    Ok(ing)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .kind(Kind::Data)
}

fn run_toy(p: &ToyConfig, out: &Path) -> Result<Outcome> {
    let t = toy_data(p).kind(Kind::Config)?;
    write_lines(&out.join("corpus.txt"), &t.corpus)?;
    let mut buf = Vec::new();
    t.dataset.to_csv(&mut buf).kind(Kind::Data)?;
    write_file(&out.join("dataset.csv"), buf)?;
    write_file(&out.join("dataset.toml"), t.config.to_toml())?;
    Ok(Outcome {
        seeds: seeds(&[("toy", p.seed)]),
        summary: json!({
            "corpus": t.corpus.len(),
            "dataset": t.dataset.len(),
            "censored": t.dataset.censored.iter().filter(|&&c| c).count(),
            "censor_limit": t.config.censor.map(|c| c.value),
        }),
    })
}

fn run_tokenizer(p: &TokenizerParams, out: &Path) -> Result<Outcome> {
    let ing = load_corpus(&p.corpus, out)?;
    let vocab = train_wordpiece(&ing.accepted, p.vocab_size, p.min_frequency).map_err(|e| {
        let k = match e {
            TokenizerError::VocabTooSmall { .. } => Kind::Config,
            _ => Kind::Data,
        };
        anyhow::Error::from(e).context(k)
    })?;
    vocab.save(&out.join("vocab.txt")).kind(Kind::Data)?;
    Ok(Outcome {
        seeds: BTreeMap::new(),
        summary: json!({
            "accepted": ing.accepted.len(),
            "rejected": ing.rejected.len(),
            "vocab_size": vocab.len(),
            "vocab_hash": vocab.hash(),
        }),
    })
}

fn run_subset(p: &SubsetParams, out: &Path) -> Result<Outcome> {
    let ing = load_corpus(&p.corpus, out)?;
    let fps: Vec<_> = ing
        .accepted
        .iter()
        .map(|s| morgan_fingerprint(&parse_smiles(s).expect("validated at ingestion"), DEFAULT_RADIUS, DEFAULT_NBITS))
        .collect();
    let clustering = match p.method {
        ClusterMethod::Butina => butina_cluster(&fps, p.threshold),
        ClusterMethod::BitbirchLike => leader_cluster(&fps, p.threshold),
    };
    let sel = proportional_subset(&clustering, p.fraction, p.seed).kind(Kind::Config)?;
    let picked: Vec<String> = sel.indices.iter().map(|&i| ing.accepted[i].clone()).collect();
    write_lines(&out.join("subset.txt"), &picked)?;
    let detail = json!({ "clustering": clustering, "selection": sel });
    write_file(&out.join("subset.json"), serde_json::to_string_pretty(&detail)?)?;
    Ok(Outcome {
        seeds: seeds(&[("subset", p.seed)]),
        summary: json!({
            "accepted": ing.accepted.len(),
            "rejected": ing.rejected.len(),
            "clusters": clustering.len(),
            "selected": picked.len(),
            "per_cluster_quota": sel.per_cluster_quota,
        }),
    })
}

fn write_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).kind(Kind::Data)?);
    for l in log {
        writeln!(f, "{}", serde_json::to_string(l)?).kind(Kind::Data)?;
    }
    f.flush().kind(Kind::Data)
}

fn train_summary(log: &[StepLog], extra: Value) -> Value {
    let mut v = json!({
        "steps": log.len(),
        "first_loss": log.first().map(|l| l.loss),
        "final_loss": log.last().map(|l| l.loss),
    });
    if let (Value::Object(a), Value::Object(b)) = (&mut v, extra) {
        a.extend(b);
    }
    v
}

fn run_pretrain(p: &PretrainParams, out: &Path) -> Result<Outcome> {
    let ing = load_corpus(&p.corpus, out)?;
    let vocab = Vocabulary::load(&p.vocab).kind(Kind::Data)?;
    let mut log = Vec::new();
    let ck = pretrain(&ing.accepted, &vocab, &p.encoder, &p.train, None, &mut |l| {
        log::debug!("step {} loss {:.5}", l.step, l.loss);
        log.push(l.clone());
    })
    .map_err(|e| {
        let k = objective_kind(&e);
        anyhow::Error::from(e).context(k)
    })?;
    ck.save(&out.join("checkpoint")).kind(Kind::Data)?;
    write_log(&out.join("train_log.jsonl"), &log)?;
    Ok(Outcome {
        seeds: seeds(&[("train", p.train.seed), ("init", p.encoder.seed)]),
        summary: train_summary(&log, json!({"accepted": ing.accepted.len(), "rejected": ing.rejected.len()})),
    })
}

fn run_adapt(p: &AdaptParams, out: &Path) -> Result<Outcome> {
    let base = load_checkpoint(&p.checkpoint)?;
    let corpus = match &p.domain {
        DomainCorpus::Corpus(c) => load_corpus(c, out)?.accepted,
        DomainCorpus::Dataset(d) => d.load()?.da_corpus(),
    };
    write_lines(&out.join("da_corpus.txt"), &corpus)?;
    let mut log = Vec::new();
    let ck = domain_adapt(&base, &corpus, &p.train, None, &mut |l| log.push(l.clone())).map_err(|e| {
        let k = objective_kind(&e);
        anyhow::Error::from(e).context(k)
    })?;
    ck.save(&out.join("checkpoint")).kind(Kind::Data)?;
    write_log(&out.join("train_log.jsonl"), &log)?;
    Ok(Outcome {
        seeds: seeds(&[("train", p.train.seed)]),
        summary: train_summary(&log, json!({"domain_molecules": corpus.len()})),
    })
}

fn embeddings_to_csv(ids: &[String], x: &Array2<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend((0..x.ncols()).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(x.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn embeddings_from_csv(path: &Path, ids: &[String]) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path).kind(Kind::Data)?;
    let width = r.headers().kind(Kind::Data)?.len().saturating_sub(1);
    let mut x = Array2::zeros((ids.len(), width));
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.kind(Kind::Data)?;
        if i >= ids.len() || rec.get(0) != Some(ids[i].as_str()) {
            return Err(anyhow::anyhow!("{}: row {i} does not match dataset id order", path.display())).kind(Kind::Data);
        }
        for j in 0..width {
            x[[i, j]] = rec[j + 1]
                .parse::<f64>()
                .with_context(|| format!("{}: row {i} column {}", path.display(), j + 1))
                .kind(Kind::Data)?;
        }
        n += 1;
    }
    if n != ids.len() {
        return Err(anyhow::anyhow!("{}: {n} rows for {} molecules", path.display(), ids.len())).kind(Kind::Data);
    }
    Ok(x)
}

fn run_embed(p: &EmbedParams, out: &Path) -> Result<Outcome> {
    let ds = p.dataset.load()?;
    let ck = load_checkpoint(&p.checkpoint)?;
    let x = embed_dataset(&ck, &ds.smiles, p.pooling).kind(Kind::Data)?;
    write_file(&out.join("embeddings.csv"), embeddings_to_csv(&ds.ids, &x)?)?;
    Ok(Outcome {
        seeds: BTreeMap::new(),
        summary: json!({"rows": x.nrows(), "dim": x.ncols()}),
    })
}

fn feature_matrix(ds: &LabeledDataset, src: &FeatureSource) -> Result<Array2<f64>> {
    let mols = || {
        ds.smiles
            .iter()
            .enumerate()
            .map(|(row, s)| parse_smiles(s).map_err(|e| DownstreamError::BadRow { row, msg: e.to_string() }))
            .collect::<Result<Vec<_>, _>>()
            .kind(Kind::Data)
    };
    let rows_to_matrix = |rows: Vec<Vec<f64>>| {
        let w = rows.first().map_or(0, Vec::len);
        Array2::from_shape_vec((rows.len(), w), rows.concat()).expect("rectangular")
    };
    Ok(match src {
        FeatureSource::Checkpoint { path, pooling } => {
            embed_dataset(&load_checkpoint(path)?, &ds.smiles, *pooling).kind(Kind::Data)?
        }
        FeatureSource::Embeddings { path } => embeddings_from_csv(path, &ds.ids)?,
        FeatureSource::Descriptors => rows_to_matrix(mols()?.iter().map(|m| compute_descriptors(m).values).collect()),
        FeatureSource::Fingerprint { radius, nbits } => {
            rows_to_matrix(mols()?.iter().map(|m| morgan_fingerprint(m, *radius, *nbits).to_dense()).collect())
        }
    })
}

fn run_evaluate(p: &EvaluateParams, out: &Path) -> Result<Outcome> {
    let ds = p.dataset.load()?;
    let x = feature_matrix(&ds, &p.features)?;
    let plan = build_split_plan(&ds, p.splits, p.folds, p.repeats, p.seed, p.threshold).map_err(|e| {
        let k = match e {
            DownstreamError::Chemspace(_) => Kind::Config,
            _ => Kind::Data,
        };
        anyhow::Error::from(e).context(k)
    })?;
    let records = run_repeated_cv(&ds, x.view(), &p.model, &plan, &p.forest, p.seed).kind(Kind::Data)?;
    write_file(&out.join("split_plan.json"), plan.to_json())?;
    let mut buf = Vec::new();
    records_to_csv(&records, &mut buf).kind(Kind::Data)?;
    write_file(&out.join("records.csv"), buf)?;
    write_file(&out.join("records.json"), serde_json::to_string_pretty(&records)?)?;
    let mut means = serde_json::Map::new();
    for m in MetricName::ALL {
        let v: Vec<f64> = records.iter().filter(|r| r.metric == m).filter_map(|r| r.value).collect();
        if !v.is_empty() {
            means.insert(m.to_string(), json!(v.iter().sum::<f64>() / v.len() as f64));
        }
    }
    Ok(Outcome {
        seeds: seeds(&[("cv", p.seed)]),
        summary: json!({
            "model": p.model,
            "cells": plan.cells().len(),
            "records": records.len(),
            "evaluated_rows": plan.rows.len(),
            "censored_rows": ds.censored.iter().filter(|&&c| c).count(),
            "mean": means,
        }),
    })
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<MetricRecord>> {
    let mut all = Vec::new();
    for p in paths {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display())).kind(Kind::Data)?;
        all.extend(records_from_csv(f).with_context(|| format!("reading {}", p.display())).kind(Kind::Data)?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedTEntry {
    pub a: String,
    pub b: String,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p_two_sided: Option<f64>,
    /// One-sided p for "a is better" under the metric's orientation.
    pub p_a_better: Option<f64>,
    pub p_b_better: Option<f64>,
}

fn paired_entries(records: &[MetricRecord], models: &[String], metric: MetricName) -> Result<Vec<PairedTEntry>> {
    let (a_better, b_better) = if metric.lower_is_better() {
        (Tail::Less, Tail::Greater)
    } else {
        (Tail::Greater, Tail::Less)
    };
    let mut out = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let s = PairedSample::from_records(records, &models[i], &models[j], metric).map_err(|e| {
                let k = stats_kind(&e);
                anyhow::Error::from(e).context(k)
            })?;
            let test = |tail| paired_t(&s, tail).ok();
            let two = test(Tail::Two);
            out.push(PairedTEntry {
                a: models[i].clone(),
                b: models[j].clone(),
                t: two.map(|r| r.t),
                df: two.map(|r| r.df),
                p_two_sided: two.map(|r| r.p),
                p_a_better: test(a_better).map(|r| r.p),
                p_b_better: test(b_better).map(|r| r.p),
            });
        }
    }
    Ok(out)
}

fn run_compare(p: &CompareParams, out: &Path) -> Result<Outcome> {
    let records = load_records(&p.records)?;
    let report = significance_report(&records, &p.models, p.metric).map_err(|e| {
        let k = stats_kind(&e);
        anyhow::Error::from(e).context(k)
    })?;
    let paired = paired_entries(&records, &p.models, p.metric)?;
    write_file(&out.join("report.json"), report.to_json())?;
    let mut buf = Vec::new();
    report.to_csv(&mut buf).kind(Kind::Data)?;
    write_file(&out.join("report.csv"), buf)?;
    write_file(&out.join("paired_t.json"), serde_json::to_string_pretty(&paired)?)?;
    let text = report.render();
    write_file(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(Outcome {
        seeds: BTreeMap::new(),
        summary: json!({"metric": p.metric, "models": p.models, "cells": report.cells}),
    })
}

fn run_report(p: &ReportParams, out: &Path) -> Result<Outcome> {
    let records = load_records(&p.records)?;
    let models: Vec<String> = records.iter().map(|r| r.model.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if models.is_empty() {
        return Err(anyhow::anyhow!("no records")).kind(Kind::Data);
    }
    let mut text = String::new();
    let mut skipped = Vec::new();
    for metric in MetricName::ALL {
        match significance_report(&records, &models, metric) {
            Ok(r) => {
                write_file(&out.join(format!("report_{metric}.json")), r.to_json())?;
                text.push_str(&r.render());
                text.push('\n');
            }
            Err(e) => {
                log::warn!("{metric}: {e}");
                text.push_str(&format!("{metric}: not reported ({e})\n\n"));
                skipped.push(metric.to_string());
            }
        }
    }
    write_file(&out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(Outcome {
        seeds: BTreeMap::new(),
        summary: json!({"models": models, "skipped_metrics": skipped}),
    })
}
