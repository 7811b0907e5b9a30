use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    apply_masking, build_triples, cl_loss, descriptor_targets, mlm_loss, mtr_loss, ClVariant, MaskingConfig, Objective,
    ObjectiveError, Step,
};
use crate::chemspace::dataset_hash;
use crate::encoder::{
    adam_step, lr_at, AdamConfig, AdamState, Checkpoint, EncoderConfig, EncoderParams, MlmHead, Mode, MtrHead, Params,
    TrainingState,
};
use crate::features::{DescriptorSet, ScalerStats};
use crate::molgraph::{canonical_smiles, parse_smiles, Molecule};
use crate::seed;
use crate::tokenizer::{encode_batch, TokenizedBatch, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    /// `adam.lr` is the peak of the warmup/decay schedule.
    pub adam: AdamConfig,
    pub seed: u64,
    pub masking: MaskingConfig,
    pub cl_variant: ClVariant,
}

impl TrainConfig {
    pub fn new(objective: Objective) -> Self {
        TrainConfig {
            objective,
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            masking: MaskingConfig::default(),
            cl_variant: ClVariant::Standard,
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size.max(1)) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        self.epochs as u64 * self.steps_per_epoch(n)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Serialize, Deserialize)]
struct RunSnapshot {
    stage: String,
    train: TrainConfig,
    corpus_hash: String,
    corpus_size: usize,
    /// Checkpoint step before this stage started.
    base_step: u64,
}

enum Prepared {
    Mlm(TokenizedBatch),
    Mtr(TokenizedBatch, Array2<f32>),
    Cl(Vec<Molecule>, Vec<String>),
}

fn parse_all(corpus: &[String]) -> Result<Vec<Molecule>, ObjectiveError> {
    corpus
        .iter()
        .enumerate()
        .map(|(row, s)| {
            parse_smiles(s).map_err(|e| ObjectiveError::BadRow {
                row,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn prepare(
    objective: Objective,
    corpus: &[String],
    vocab: &Vocabulary,
    max_len: usize,
    scaler: Option<&ScalerStats>,
) -> Result<(Prepared, Option<ScalerStats>), ObjectiveError> {
    Ok(match objective {
        Objective::Mlm => (Prepared::Mlm(encode_batch(corpus, vocab, max_len)), None),
        Objective::Mtr => {
            let mols = parse_all(corpus)?;
            let set = match scaler {
                Some(s) => DescriptorSet::from_names(&s.names).map_err(|n| ObjectiveError::BadRow {
                    row: 0,
                    msg: format!("unknown descriptor {n} in scaler"),
                })?,
                None => DescriptorSet::default(),
            };
            let (fitted, y) = descriptor_targets(&mols, &set, scaler)?;
            (Prepared::Mtr(encode_batch(corpus, vocab, max_len), y.mapv(|v| v as f32)), Some(fitted))
        }
        Objective::Cl => {
            let mols = parse_all(corpus)?;
            let canon = mols.iter().map(canonical_smiles).collect();
            (Prepared::Cl(mols, canon), None)
        }
    })
}

struct Run<'a> {
    cfg: &'a EncoderConfig,
    vocab: &'a Vocabulary,
    tc: &'a TrainConfig,
    data: &'a Prepared,
    n: usize,
    total: u64,
}

impl Run<'_> {
    fn step_loss(&self, params: &Params<f32>, rows: &[usize], s: u64) -> Result<Step<f32>, ObjectiveError> {
        let step_seed = seed::derive(self.tc.seed, "step", s);
        let mode = Mode::Train { seed: step_seed };
        match self.data {
            Prepared::Mlm(tokens) => {
                let b = tokens.select(rows).trimmed();
                let masked = apply_masking(&b, self.cfg.vocab_size, &self.tc.masking, step_seed);
                mlm_loss(self.cfg, params, &masked, mode, true)
            }
            Prepared::Mtr(tokens, y) => {
                let b = tokens.select(rows).trimmed();
                let t = y.select(ndarray::Axis(0), rows);
                mtr_loss(self.cfg, params, &b, &t, mode, true)
            }
            Prepared::Cl(mols, canon) => {
                let t = build_triples(mols, canon, rows, step_seed, self.vocab, self.cfg.max_len)?;
                cl_loss(self.cfg, params, &t, self.tc.cl_variant, mode, true)
            }
        }
    }

    /// Continues from `opt.step` up to the end of the schedule or
    /// `stop_after` steps.
    fn execute(
        &self,
        params: &mut Params<f32>,
        opt: &mut AdamState<f32>,
        stop_after: Option<u64>,
        log: &mut dyn FnMut(&StepLog),
    ) -> Result<(), ObjectiveError> {
        let bs = self.tc.batch_size;
        let per_epoch = self.tc.steps_per_epoch(self.n);
        for epoch in 0..self.tc.epochs {
            let first = epoch as u64 * per_epoch;
            if first + per_epoch <= opt.step {
                continue;
            }
            let mut order: Vec<usize> = (0..self.n).collect();
            order.shuffle(&mut seed::rng(self.tc.seed, "shuffle", epoch as u64));
            for k in 0..per_epoch {
                let s = first + k;
                if s < opt.step {
                    continue;
                }
                if stop_after.is_some_and(|m| s >= m) {
                    return Ok(());
                }
                let lo = k as usize * bs;
                let rows = &order[lo..(lo + bs).min(self.n)];
                let lr = lr_at(s, self.total, self.tc.adam.lr);
                let step = self.step_loss(params, rows, s)?;
                if !step.loss.is_finite() {
                    return Err(ObjectiveError::NonFinite(s));
                }
                adam_step(params, step.grads.as_ref().expect("gradients requested"), opt, lr);
                log::debug!("step {s} epoch {epoch} lr {lr:.3e} loss {:.5}", step.loss);
                log(&StepLog {
                    step: s,
                    epoch,
                    lr,
                    loss: step.loss,
                });
            }
        }
        if !params.all_finite() {
            return Err(ObjectiveError::NonFinite(opt.step));
        }
        Ok(())
    }
}

fn check_vocab(cfg: &EncoderConfig, vocab: &Vocabulary) -> Result<(), ObjectiveError> {
    if cfg.vocab_size != vocab.len() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "encoder vocab_size {} but vocabulary has {} tokens",
            cfg.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

fn attach_heads(
    params: &mut Params<f32>,
    cfg: &EncoderConfig,
    tc: &TrainConfig,
    mtr_dim: Option<usize>,
    fresh_mtr: bool,
) {
    let d = cfg.hidden_dim;
    match tc.objective {
        Objective::Mlm if params.mlm.is_none() => {
            params.mlm = Some(MlmHead::init(d, cfg.vocab_size, seed::derive(tc.seed, "mlm-head", 0), cfg.init_std));
        }
        Objective::Mtr if fresh_mtr || params.mtr.is_none() => {
            let k = mtr_dim.expect("descriptor width known");
            params.mtr = Some(MtrHead::init(d, k, seed::derive(tc.seed, "mtr-head", 0), cfg.init_std));
        }
        _ => {}
    }
}

/// Trains a freshly initialized encoder on `corpus`. With `epochs == 0` the
/// result is the initialization itself. `stop_after` ends the run early
/// after that many steps, leaving a resumable checkpoint.
pub fn pretrain(
    corpus: &[String],
    vocab: &Vocabulary,
    cfg: &EncoderConfig,
    tc: &TrainConfig,
    stop_after: Option<u64>,
    log: &mut dyn FnMut(&StepLog),
) -> Result<Checkpoint, ObjectiveError> {
    cfg.validate()?;
    check_vocab(cfg, vocab)?;
    if corpus.is_empty() {
        return Err(ObjectiveError::EmptyDomainCorpus);
    }
    let (data, scaler) = prepare(tc.objective, corpus, vocab, cfg.max_len, None)?;
    let mut params = Params::new(EncoderParams::init(cfg));
    attach_heads(&mut params, cfg, tc, scaler.as_ref().map(ScalerStats::output_dim), true);
    let run = Run {
        cfg,
        vocab,
        tc,
        data: &data,
        n: corpus.len(),
        total: tc.total_steps(corpus.len()),
    };
    let mut opt = AdamState::new(&params, tc.adam);
    run.execute(&mut params, &mut opt, stop_after, log)?;
    let snapshot = RunSnapshot {
        stage: "pretrain".into(),
        train: tc.clone(),
        corpus_hash: dataset_hash(corpus),
        corpus_size: corpus.len(),
        base_step: 0,
    };
    Ok(Checkpoint {
        config: cfg.clone(),
        params,
        vocab: vocab.clone(),
        scaler,
        step: opt.step,
        training: Some(TrainingState {
            total_steps: run.total,
            run: serde_json::to_value(&snapshot).expect("snapshot serializes"),
            optimizer: opt,
        }),
    })
}

/// Further trains `base` on an unlabeled domain corpus with a fresh
/// optimizer and a schedule spanning only the adaptation steps. MTR refits
/// the descriptor scaler on the domain corpus and starts a new head.
pub fn domain_adapt(
    base: &Checkpoint,
    corpus: &[String],
    tc: &TrainConfig,
    stop_after: Option<u64>,
    log: &mut dyn FnMut(&StepLog),
) -> Result<Checkpoint, ObjectiveError> {
    if corpus.is_empty() {
        return Err(ObjectiveError::EmptyDomainCorpus);
    }
    let cfg = &base.config;
    let (data, fitted) = prepare(tc.objective, corpus, &base.vocab, cfg.max_len, None)?;
    let mut params = base.params.clone();
    attach_heads(&mut params, cfg, tc, fitted.as_ref().map(ScalerStats::output_dim), true);
    let run = Run {
        cfg,
        vocab: &base.vocab,
        tc,
        data: &data,
        n: corpus.len(),
        total: tc.total_steps(corpus.len()),
    };
    let mut opt = AdamState::new(&params, tc.adam);
    run.execute(&mut params, &mut opt, stop_after, log)?;
    let snapshot = RunSnapshot {
        stage: "adapt".into(),
        train: tc.clone(),
        corpus_hash: dataset_hash(corpus),
        corpus_size: corpus.len(),
        base_step: base.step,
    };
    Ok(Checkpoint {
        config: cfg.clone(),
        params,
        vocab: base.vocab.clone(),
        scaler: fitted.or_else(|| base.scaler.clone()),
        step: base.step + opt.step,
        training: Some(TrainingState {
            total_steps: run.total,
            run: serde_json::to_value(&snapshot).expect("snapshot serializes"),
            optimizer: opt,
        }),
    })
}

/// Continues an interrupted `pretrain` or `domain_adapt` run on the same
/// corpus. The result is identical to the uninterrupted run.
pub fn resume(
    ck: &Checkpoint,
    corpus: &[String],
    stop_after: Option<u64>,
    log: &mut dyn FnMut(&StepLog),
) -> Result<Checkpoint, ObjectiveError> {
    let ts = ck
        .training
        .as_ref()
        .ok_or_else(|| ObjectiveError::Resume("checkpoint carries no optimizer state".into()))?;
    let snap: RunSnapshot =
        serde_json::from_value(ts.run.clone()).map_err(|e| ObjectiveError::Resume(format!("run snapshot: {e}")))?;
    if snap.corpus_hash != dataset_hash(corpus) {
        return Err(ObjectiveError::Resume("corpus differs from the one the run started on".into()));
    }
    let tc = &snap.train;
    let scaler = if tc.objective == Objective::Mtr { ck.scaler.as_ref() } else { None };
    let (data, _) = prepare(tc.objective, corpus, &ck.vocab, ck.config.max_len, scaler)?;
    let run = Run {
        cfg: &ck.config,
        vocab: &ck.vocab,
        tc,
        data: &data,
        n: corpus.len(),
        total: ts.total_steps,
    };
    let mut params = ck.params.clone();
    let mut opt = ts.optimizer.clone();
    run.execute(&mut params, &mut opt, stop_after, log)?;
    Ok(Checkpoint {
        params,
        step: snap.base_step + opt.step,
        training: Some(TrainingState {
            total_steps: ts.total_steps,
            run: ts.run.clone(),
            optimizer: opt,
        }),
        ..ck.clone()
    })
}

/// Eval-mode loss of `objective` over `corpus` in batches of 16. MLM masks
/// with `seed`; MTR standardizes with the checkpoint's scaler.
pub fn evaluate_loss(ck: &Checkpoint, corpus: &[String], objective: Objective, seed: u64) -> Result<f64, ObjectiveError> {
    let scaler = match objective {
        Objective::Mtr => Some(
            ck.scaler
                .as_ref()
                .ok_or_else(|| ObjectiveError::ShapeMismatch("checkpoint has no descriptor scaler".into()))?,
        ),
        _ => None,
    };
    let (data, _) = prepare(objective, corpus, &ck.vocab, ck.config.max_len, scaler)?;
    let (cfg, params) = (&ck.config, &ck.params);
    let mut total = 0.0;
    let mut weight = 0.0;
    for (bi, rows) in (0..corpus.len()).collect::<Vec<_>>().chunks(16).enumerate() {
        let (loss, w) = match &data {
            Prepared::Mlm(tokens) => {
                let b = tokens.select(rows).trimmed();
                let m = apply_masking(&b, cfg.vocab_size, &MaskingConfig::default(), seed::derive(seed, "eval", bi as u64));
                (mlm_loss(cfg, params, &m, Mode::Eval, false)?.loss, m.num_selected() as f64)
            }
            Prepared::Mtr(tokens, y) => {
                let b = tokens.select(rows).trimmed();
                let t = y.select(ndarray::Axis(0), rows);
                (mtr_loss(cfg, params, &b, &t, Mode::Eval, false)?.loss, t.len() as f64)
            }
            Prepared::Cl(mols, canon) => {
                let t = build_triples(mols, canon, rows, seed::derive(seed, "eval", bi as u64), &ck.vocab, cfg.max_len)?;
                (cl_loss(cfg, params, &t, ClVariant::Standard, Mode::Eval, false)?.loss, rows.len() as f64)
            }
        };
        total += loss * w;
        weight += w;
    }
    Ok(total / weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_wordpiece;

    fn corpus() -> Vec<String> {
        ["CCO", "CCN", "c1ccccc1O", "CC(=O)O", "CCCCC", "c1ccncc1", "OCCO", "CC(C)N", "CCOC(=O)C", "C1CCCCC1"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn small_cfg(vocab: &Vocabulary) -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            heads: 2,
            hidden_dim: 16,
            ff_dim: 16,
            max_len: 24,
            vocab_size: vocab.len(),
            ..EncoderConfig::desk()
        }
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let c = corpus();
        let vocab = train_wordpiece(&c, 40, 1).unwrap();
        let cfg = small_cfg(&vocab);
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::new(Objective::Mlm)
        };
        let ck = pretrain(&c, &vocab, &cfg, &tc, None, &mut |_| {}).unwrap();
        assert_eq!(ck.params.encoder, EncoderParams::init(&cfg));
        assert_eq!(ck.step, 0);
    }

    #[test]
    fn resume_is_bitwise_identical() {
        let c = corpus();
        let vocab = train_wordpiece(&c, 40, 1).unwrap();
        let cfg = small_cfg(&vocab);
        for objective in [Objective::Mlm, Objective::Mtr, Objective::Cl] {
            let tc = TrainConfig {
                epochs: 3,
                batch_size: 4,
                adam: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                ..TrainConfig::new(objective)
            };
            let mut full_log = Vec::new();
            let full = pretrain(&c, &vocab, &cfg, &tc, None, &mut |l| full_log.push(l.clone())).unwrap();
            assert_eq!(full.step, 9);
            let half = pretrain(&c, &vocab, &cfg, &tc, Some(4), &mut |_| {}).unwrap();
            assert_eq!(half.step, 4);
            let dir = tempfile::tempdir().unwrap();
            half.save(dir.path()).unwrap();
            let loaded = Checkpoint::load(dir.path()).unwrap();
            let mut tail = Vec::new();
            let resumed = resume(&loaded, &c, None, &mut |l| tail.push(l.clone())).unwrap();
            assert_eq!(resumed.params, full.params, "{objective}");
            assert_eq!(resumed.step, full.step);
            assert_eq!(tail[..], full_log[4..]);
        }
    }

    #[test]
    fn adapt_changes_parameters_and_zero_epochs_does_not() {
        let c = corpus();
        let vocab = train_wordpiece(&c, 40, 1).unwrap();
        let cfg = small_cfg(&vocab);
        let base = pretrain(&c, &vocab, &cfg, &TrainConfig { epochs: 1, ..TrainConfig::new(Objective::Mlm) }, None, &mut |_| {}).unwrap();
        let domain: Vec<String> = c[..6].to_vec();
        for objective in [Objective::Mlm, Objective::Mtr, Objective::Cl] {
            let none = domain_adapt(&base, &domain, &TrainConfig { epochs: 0, ..TrainConfig::new(objective) }, None, &mut |_| {}).unwrap();
            assert_eq!(none.params.encoder, base.params.encoder);
            let tc = TrainConfig {
                epochs: 1,
                ..TrainConfig::new(objective)
            };
            let mut lines = 0;
            let adapted = domain_adapt(&base, &domain, &tc, None, &mut |_| lines += 1).unwrap();
            assert_eq!(lines, 1);
            assert_eq!(adapted.step, base.step + 1);
            let moved = Params::new(adapted.params.encoder.clone()).l2_distance(&Params::new(base.params.encoder.clone()));
            assert!(moved > 0.0, "{objective}");
            if objective == Objective::Mtr {
                assert!(adapted.scaler.is_some());
            }
        }
        assert!(matches!(
            domain_adapt(&base, &[], &TrainConfig::new(Objective::Mlm), None, &mut |_| {}),
            Err(ObjectiveError::EmptyDomainCorpus)
        ));
    }
}
