//! Checkpoint directory layout:
//!
//! ```text
//! manifest.json        config, vocab hash, scaler, step, tensor list
//! vocab.txt            one token per line
//! tensors/<name>.f32   little-endian f32, row-major
//! optimizer/{m,v}.<name>.f32   Adam moments, only for resumable runs
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, EncoderConfig, EncoderError, EncoderParams, MlmHead, MtrHead, Params};
use crate::features::ScalerStats;
use crate::tokenizer::Vocabulary;

const FORMAT: &str = "moldapt-checkpoint-1";

/// State needed to continue an interrupted training run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub total_steps: u64,
    /// Snapshot of the run configuration that produced this state.
    pub run: serde_json::Value,
    pub optimizer: AdamState<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: Params<f32>,
    pub vocab: Vocabulary,
    pub scaler: Option<ScalerStats>,
    /// Optimizer steps applied since initialization, over all stages.
    pub step: u64,
    pub training: Option<TrainingState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainingEntry {
    total_steps: u64,
    run: serde_json::Value,
    adam_step: u64,
    adam: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: EncoderConfig,
    vocab_hash: String,
    vocab_size: usize,
    scaler: Option<ScalerStats>,
    step: u64,
    mlm_head: bool,
    mtr_dim: Option<usize>,
    dtype: String,
    tensors: Vec<TensorEntry>,
    training: Option<TrainingEntry>,
}

fn write_blob(path: &Path, data: &[f32]) -> Result<(), EncoderError> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_blob(path: &Path, dst: &mut [f32]) -> Result<(), EncoderError> {
    let bytes = fs::read(path)?;
    if bytes.len() != dst.len() * 4 {
        return Err(EncoderError::Checkpoint(format!(
            "{}: expected {} floats, found {} bytes",
            path.display(),
            dst.len(),
            bytes.len()
        )));
    }
    for (v, chunk) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(())
}

fn skeleton(cfg: &EncoderConfig, mlm: bool, mtr_dim: Option<usize>) -> Params<f32> {
    let d = cfg.hidden_dim;
    Params {
        encoder: EncoderParams::zeros(cfg),
        mlm: mlm.then(|| MlmHead::zeros(d, cfg.vocab_size)),
        mtr: mtr_dim.map(|k| MtrHead::zeros(d, k)),
    }
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<(), EncoderError> {
        fs::create_dir_all(dir.join("tensors"))?;
        self.vocab.save(&dir.join("vocab.txt")).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
        let mut tensors = Vec::new();
        for (name, data) in self.params.named_slices() {
            write_blob(&dir.join("tensors").join(format!("{name}.f32")), data)?;
            tensors.push(TensorEntry { name, len: data.len() });
        }
        let training = match &self.training {
            Some(ts) => {
                fs::create_dir_all(dir.join("optimizer"))?;
                for (tag, moments) in [("m", &ts.optimizer.m), ("v", &ts.optimizer.v)] {
                    for (name, data) in moments.named_slices() {
                        write_blob(&dir.join("optimizer").join(format!("{tag}.{name}.f32")), data)?;
                    }
                }
                Some(TrainingEntry {
                    total_steps: ts.total_steps,
                    run: ts.run.clone(),
                    adam_step: ts.optimizer.step,
                    adam: ts.optimizer.hp,
                })
            }
            None => None,
        };
        let manifest = Manifest {
            format: FORMAT.into(),
            config: self.config.clone(),
            vocab_hash: self.vocab.hash(),
            vocab_size: self.vocab.len(),
            scaler: self.scaler.clone(),
            step: self.step,
            mlm_head: self.params.mlm.is_some(),
            mtr_dim: self.params.mtr.as_ref().map(MtrHead::out_dim),
            dtype: "f32".into(),
            tensors,
            training,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint, EncoderError> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != FORMAT || manifest.dtype != "f32" {
            return Err(EncoderError::Checkpoint(format!(
                "unsupported checkpoint format {} / {}",
                manifest.format, manifest.dtype
            )));
        }
        manifest.config.validate()?;
        let vocab = Vocabulary::load(&dir.join("vocab.txt")).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(EncoderError::Checkpoint("vocab.txt does not match the manifest hash".into()));
        }
        let mut params = skeleton(&manifest.config, manifest.mlm_head, manifest.mtr_dim);
        {
            let mut slots = params.named_slices_mut();
            if slots.len() != manifest.tensors.len() {
                return Err(EncoderError::Checkpoint("tensor list does not match the config".into()));
            }
            for ((name, dst), entry) in slots.iter_mut().zip(&manifest.tensors) {
                if *name != entry.name || dst.len() != entry.len {
                    return Err(EncoderError::Checkpoint(format!("unexpected tensor {}", entry.name)));
                }
                read_blob(&dir.join("tensors").join(format!("{name}.f32")), dst)?;
            }
        }
        let training = match manifest.training {
            Some(t) => {
                let mut optimizer = AdamState::new(&params, t.adam);
                optimizer.step = t.adam_step;
                for (tag, moments) in [("m", &mut optimizer.m), ("v", &mut optimizer.v)] {
                    for (name, dst) in moments.named_slices_mut() {
                        read_blob(&dir.join("optimizer").join(format!("{tag}.{name}.f32")), dst)?;
                    }
                }
                Some(TrainingState {
                    total_steps: t.total_steps,
                    run: t.run,
                    optimizer,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            config: manifest.config,
            params,
            vocab,
            scaler: manifest.scaler,
            step: manifest.step,
            training,
        })
    }
}
