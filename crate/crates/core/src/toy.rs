//! Synthetic molecules and a descriptor-derived regression target, so the
//! whole pipeline runs without external data.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::downstream::{CensorDirection, CensorRule, DatasetConfig, DownstreamError, LabeledDataset, Transform};
use crate::features::{compute_descriptor_set, Descriptor, DescriptorSet};
use crate::molgraph::{canonical_smiles, parse_smiles, MAX_HEAVY_ATOMS, MIN_HEAVY_ATOMS};
use crate::seed;

// Fragments are joined head to tail: a start group, 3–6 linkers, an end
// group. Each linker bonds to its predecessor through its first atom and
// to its successor through its last unbranched atom.
const STARTS: &[&str] = &["C", "CC", "N", "O", "F", "Cl", "CO", "NC(=O)", "OC(=O)", "CN(C)", "c1ccccc1", "C1CC1"];
const LINKERS: &[&str] = &[
    "C",
    "CC",
    "C(C)",
    "C(O)",
    "C(F)",
    "N",
    "N(C)",
    "O",
    "C(=O)",
    "C(=O)N",
    "S",
    "S(=O)(=O)",
    "C=C",
    "C#C",
    "c1ccc(cc1)",
    "c1cccc(c1)",
    "C1CCC(CC1)",
    "c1ccc(nc1)",
    "C1CCN(CC1)",
    "c1csc(c1)",
];
const ENDS: &[&str] = &[
    "C",
    "O",
    "N",
    "F",
    "Cl",
    "Br",
    "C(F)(F)F",
    "C#N",
    "C(=O)O",
    "C(N)=O",
    "c1ccccc1",
    "C1CC1",
    "c1ccncc1",
    "c1ccoc1",
    "C1CCOCC1",
];

/// Target weights on the reference descriptors.
pub const TARGET_WEIGHTS: &[(Descriptor, f64)] = &[
    (Descriptor::MolWeight, 0.01),
    (Descriptor::Hbd, -0.5),
    (Descriptor::Hba, 0.3),
    (Descriptor::AromaticRings, 0.4),
    (Descriptor::RotatableBonds, -0.2),
    (Descriptor::FractionCsp3, 1.0),
];

// Inside a series only acyclic groups (the leading entries) are swapped.
const SMALL_STARTS: usize = 10;
const SMALL_LINKERS: usize = 14;
const SMALL_ENDS: usize = 10;

/// Largest analog series.
const MAX_SERIES: usize = 12;

/// `n` distinct canonical SMILES with 5–100 heavy atoms, drawn as analog
/// series: each series has a parent chain and members that differ from it
/// in one acyclic start group, end group or linker.
pub fn generate_smiles(n: usize, seed: u64) -> Vec<String> {
    let mut rng = seed::rng(seed, "toy_smiles", 0);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, v: &[&'static str]| v[rng.random_range(0..v.len())];
    while out.len() < n {
        let start = pick(&mut rng, STARTS);
        let linkers: Vec<&str> = (0..rng.random_range(3..=6)).map(|_| pick(&mut rng, LINKERS)).collect();
        let end = pick(&mut rng, ENDS);
        let size = rng.random_range(1..=MAX_SERIES);
        for member in 0..size {
            let (mut st, mut li, mut en) = (start, linkers.clone(), end);
            if member > 0 {
                match rng.random_range(0..4) {
                    0 | 1 => en = pick(&mut rng, &ENDS[..SMALL_ENDS]),
                    2 => st = pick(&mut rng, &STARTS[..SMALL_STARTS]),
                    _ => {
                        let k = rng.random_range(0..li.len());
                        li[k] = pick(&mut rng, &LINKERS[..SMALL_LINKERS]);
                    }
                }
            }
            let s = format!("{st}{}{en}", li.concat());
            let Ok(m) = parse_smiles(&s) else { continue };
            if !(MIN_HEAVY_ATOMS..=MAX_HEAVY_ATOMS).contains(&m.heavy_atom_count()) {
                continue;
            }
            let c = canonical_smiles(&m);
            if out.len() < n && seen.insert(c.clone()) {
                out.push(c);
            }
        }
    }
    out
}

/// Noise-free target of one molecule.
pub fn toy_target(smiles: &str) -> Result<f64, DownstreamError> {
    let m = parse_smiles(smiles).map_err(|e| DownstreamError::BadRow { row: 0, msg: e.to_string() })?;
    let set = DescriptorSet(TARGET_WEIGHTS.iter().map(|w| w.0).collect());
    let d = compute_descriptor_set(&m, &set);
    Ok(d.values.iter().zip(TARGET_WEIGHTS).map(|(v, w)| v * w.1).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_dataset: usize,
    pub n_corpus: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    /// Share of the target distribution below the detection limit.
    pub censor_quantile: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_dataset: 500,
            n_corpus: 1000,
            noise: 0.1,
            censor_quantile: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    /// Unlabeled pre-training molecules, disjoint from the dataset.
    pub corpus: Vec<String>,
    pub config: DatasetConfig,
    /// Targets as written to CSV: values above the limit are clipped to it.
    pub raw: Vec<f64>,
    pub dataset: LabeledDataset,
}

pub fn toy_data(cfg: &ToyConfig) -> Result<ToyData, DownstreamError> {
    if !(0.0..=1.0).contains(&cfg.censor_quantile) || cfg.n_dataset < 2 {
        return Err(DownstreamError::Config(format!("invalid toy config {cfg:?}")));
    }
    let mut all = generate_smiles(cfg.n_dataset + cfg.n_corpus, cfg.seed);
    let smiles = all.split_off(cfg.n_corpus);
    let corpus = all;
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| DownstreamError::Config(e.to_string()))?;
    let mut rng = seed::rng(cfg.seed, "toy_noise", 0);
    let mut raw = smiles
        .iter()
        .map(|s| Ok(toy_target(s)? + noise.sample(&mut rng)))
        .collect::<Result<Vec<f64>, DownstreamError>>()?;
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let k = ((cfg.censor_quantile * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
    // Rounded so the limit survives a text round trip unchanged.
    let limit = (sorted[k] * 100.0).round() / 100.0;
    for v in raw.iter_mut() {
        if *v >= limit {
            *v = limit;
        }
    }
    let config = DatasetConfig {
        name: "toy".into(),
        transform: Transform::None,
        censor: Some(CensorRule {
            value: limit,
            direction: CensorDirection::Above,
        }),
    };
    let ids = (0..smiles.len()).map(|i| format!("toy{i:04}")).collect();
    let dataset = LabeledDataset::new(&config, ids, smiles, &raw)?;
    Ok(ToyData {
        corpus,
        config,
        raw,
        dataset,
    })
}
