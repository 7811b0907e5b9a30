use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::error::{config_err, Kind, KindExt};
use crate::stages::Stage;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a stage: the resolved parameters (seeds
/// included), digests of what it read and of what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).kind(Kind::Config)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).kind(Kind::Config)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Regular files under `path` (or `path` itself), sorted.
pub fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", path.display()))?;
        if entry.file_type().is_file() {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

pub fn digest_inputs(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for p in paths {
        for f in files_under(p)? {
            out.push(FileDigest {
                path: f.display().to_string(),
                sha256: sha256_file(&f)?,
            });
        }
    }
    Ok(out)
}

pub fn digest_outputs(dir: &Path) -> Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for f in files_under(dir)? {
        let rel = f.strip_prefix(dir).expect("walked under dir");
        if rel == Path::new(MANIFEST) {
            continue;
        }
        out.push(FileDigest {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(&f)?,
        });
    }
    Ok(out)
}

/// Creates `out`, which must be absent or empty and must not contain any
/// input.
pub fn prepare_out_dir(out: &Path, inputs: &[PathBuf]) -> Result<()> {
    let abs = std::path::absolute(out).kind(Kind::Config)?;
    for i in inputs {
        if i.starts_with(&abs) {
            return Err(config_err(format!(
                "input {} lies inside the output directory {}",
                i.display(),
                abs.display()
            )));
        }
    }
    if abs.exists() && fs::read_dir(&abs).kind(Kind::Config)?.next().is_some() {
        return Err(config_err(format!("output directory {} is not empty", abs.display())));
    }
    fs::create_dir_all(&abs).with_context(|| format!("creating {}", abs.display())).kind(Kind::Data)
}

/// Runs `stage` into `out` and writes its manifest. Inputs are hashed
/// before and after the run; a change in between is an error.
pub fn execute(stage: &Stage, out: &Path) -> Result<Manifest> {
    let input_paths = stage.inputs();
    let before = digest_inputs(&input_paths).kind(Kind::Data)?;
    prepare_out_dir(out, &input_paths)?;
    log::info!("{} -> {}", stage.name(), out.display());
    let outcome = stage.run(out)?;
    if digest_inputs(&input_paths).kind(Kind::Data)? != before {
        return Err(anyhow::anyhow!("inputs changed while {} was running", stage.name())).kind(Kind::Data);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        stage: stage.clone(),
        seeds: outcome.seeds,
        inputs: before,
        outputs: digest_outputs(out).kind(Kind::Data)?,
        summary: outcome.summary,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(out.join(MANIFEST), text + "\n").kind(Kind::Data)?;
    Ok(manifest)
}

#[derive(Debug)]
pub struct ReplayDiff {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub changed: Vec<String>,
}

impl ReplayDiff {
    pub fn is_identical(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.changed.is_empty()
    }
}

/// Reruns the stage recorded in `manifest` into `out` and compares output
/// digests with the recorded ones.
pub fn replay(manifest: &Manifest, out: &Path) -> Result<ReplayDiff> {
    let current = digest_inputs(&manifest.stage.inputs()).kind(Kind::Data)?;
    if current != manifest.inputs {
        return Err(anyhow::anyhow!("recorded inputs no longer match their digests")).kind(Kind::Data);
    }
    let fresh = execute(&manifest.stage, out)?;
    let old: BTreeMap<_, _> = manifest.outputs.iter().map(|d| (&d.path, &d.sha256)).collect();
    let new: BTreeMap<_, _> = fresh.outputs.iter().map(|d| (&d.path, &d.sha256)).collect();
    Ok(ReplayDiff {
        missing: old.keys().filter(|k| !new.contains_key(*k)).map(|k| k.to_string()).collect(),
        extra: new.keys().filter(|k| !old.contains_key(*k)).map(|k| k.to_string()).collect(),
        changed: old.iter().filter(|(k, v)| new.get(*k).is_some_and(|n| n != *v)).map(|(k, _)| k.to_string()).collect(),
    })
}
