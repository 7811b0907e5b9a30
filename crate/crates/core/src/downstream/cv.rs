use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, fit_forest, DownstreamError, ForestConfig, LabeledDataset, MetricName};
use crate::chemspace::{
    butina_cluster, butina_split_plan, dataset_hash, random_split_plan, Clustering, SplitPlan, SplitPolicy,
};
use crate::features::{morgan_fingerprint, DEFAULT_NBITS, DEFAULT_RADIUS};
use crate::molgraph::parse_smiles;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub dataset: String,
    pub policy: SplitPolicy,
    pub repeat: usize,
    pub fold: usize,
    pub metric: MetricName,
    /// Missing when the metric is undefined for the cell.
    pub value: Option<f64>,
}

pub(crate) fn sort_records(records: &mut [MetricRecord]) {
    records.sort_by(|a, b| {
        (&a.model, &a.dataset, a.policy, a.repeat, a.fold, a.metric).cmp(&(&b.model, &b.dataset, b.policy, b.repeat, b.fold, b.metric))
    });
}

/// Split plan over the non-censored rows of `dataset`. The Butina policy
/// clusters Morgan fingerprints at `threshold` and keeps clusters whole.
pub fn build_split_plan(
    dataset: &LabeledDataset,
    policy: SplitPolicy,
    n_folds: usize,
    n_repeats: usize,
    seed: u64,
    threshold: f64,
) -> Result<SplitPlan, DownstreamError> {
    let rows = dataset.evaluation_rows();
    let hash = dataset_hash(&dataset.smiles);
    Ok(match policy {
        SplitPolicy::Random => random_split_plan(&rows, n_folds, n_repeats, seed, &hash)?,
        SplitPolicy::Butina => {
            let fps = rows
                .iter()
                .map(|&r| {
                    parse_smiles(&dataset.smiles[r])
                        .map(|m| morgan_fingerprint(&m, DEFAULT_RADIUS, DEFAULT_NBITS))
                        .map_err(|e| DownstreamError::BadRow { row: r, msg: e.to_string() })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let local = butina_cluster(&fps, threshold);
            let clustering = Clustering {
                clusters: local.clusters.iter().map(|c| c.iter().map(|&i| rows[i]).collect()).collect(),
                ..local
            };
            butina_split_plan(&clustering, n_folds, n_repeats, seed, &hash)?
        }
    })
}

/// Fits a forest on the training rows of every cell of `plan` and scores
/// the test rows. `features` has one row per dataset row. Cell `c` uses the
/// forest seed derived from `(seed, c)`; records come back sorted.
pub fn run_repeated_cv(
    dataset: &LabeledDataset,
    features: ArrayView2<f64>,
    model: &str,
    plan: &SplitPlan,
    forest: &ForestConfig,
    seed: u64,
) -> Result<Vec<MetricRecord>, DownstreamError> {
    if features.nrows() != dataset.len() {
        return Err(DownstreamError::Shape(format!(
            "{} feature rows for {} molecules",
            features.nrows(),
            dataset.len()
        )));
    }
    if plan.dataset_hash != dataset_hash(&dataset.smiles) {
        return Err(DownstreamError::Config("split plan was built for a different dataset".into()));
    }
    if let Some(&r) = plan.rows.iter().find(|&&r| r >= dataset.len() || dataset.censored[r]) {
        return Err(DownstreamError::BadRow {
            row: r,
            msg: "censored or out-of-range row in split plan".into(),
        });
    }
    let cells = plan.cells();
    let per_cell: Vec<Vec<MetricRecord>> = cells
        .par_iter()
        .map(|cell| {
            let x = features.select(Axis(0), &cell.train);
            let y: Vec<f64> = cell.train.iter().map(|&i| dataset.target[i]).collect();
            let index = (cell.repeat * plan.n_folds + cell.fold) as u64;
            let m = fit_forest(x.view(), &y, forest, seed::derive(seed, "cell", index))?;
            let pred = m.predict(features.select(Axis(0), &cell.test).view())?;
            let truth: Vec<f64> = cell.test.iter().map(|&i| dataset.target[i]).collect();
            let metrics = compute_metrics(&truth, &pred)?;
            Ok(MetricName::ALL
                .iter()
                .map(|&metric| MetricRecord {
                    model: model.to_string(),
                    dataset: dataset.name.clone(),
                    policy: plan.policy,
                    repeat: cell.repeat,
                    fold: cell.fold,
                    metric,
                    value: metrics.get(metric),
                })
                .collect())
        })
        .collect::<Result<_, DownstreamError>>()?;
    let mut records: Vec<MetricRecord> = per_cell.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

pub fn records_to_csv<W: std::io::Write>(records: &[MetricRecord], w: W) -> Result<(), DownstreamError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn records_from_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricRecord>, DownstreamError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downstream::{CensorDirection, CensorRule, DatasetConfig, Transform};
    use ndarray::Array2;

    fn dataset() -> LabeledDataset {
        let smiles: Vec<String> = [
            "CCO", "CCCO", "CCCCO", "CCN", "CCCN", "c1ccccc1", "c1ccccc1C", "c1ccccc1O", "CC(=O)O", "CC(=O)OC", "C1CCCCC1",
            "C1CCCCC1C", "OCCO", "NCCN", "CSC", "CCSC",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let raw: Vec<f64> = (0..smiles.len()).map(|i| i as f64 * 0.5).collect();
        let cfg = DatasetConfig {
            name: "d".into(),
            transform: Transform::None,
            censor: Some(CensorRule {
                value: 7.0,
                direction: CensorDirection::Above,
            }),
        };
        let ids = (0..smiles.len()).map(|i| i.to_string()).collect();
        LabeledDataset::new(&cfg, ids, smiles, &raw).unwrap()
    }

    #[test]
    fn records_cover_every_cell_and_metric() {
        let ds = dataset();
        assert_eq!(ds.censored.iter().filter(|&&c| c).count(), 2);
        let x = Array2::from_shape_fn((ds.len(), 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 + i as f64 * 0.1);
        let forest = ForestConfig {
            n_trees: 5,
            ..ForestConfig::default()
        };
        for policy in [SplitPolicy::Random, SplitPolicy::Butina] {
            let plan = build_split_plan(&ds, policy, 2, 3, 9, 0.3).unwrap();
            assert!(plan.rows.iter().all(|&r| !ds.censored[r]));
            let recs = run_repeated_cv(&ds, x.view(), "m", &plan, &forest, 4).unwrap();
            assert_eq!(recs.len(), 2 * 3 * 5);
            assert_eq!(recs, run_repeated_cv(&ds, x.view(), "m", &plan, &forest, 4).unwrap());
            let mut buf = Vec::new();
            records_to_csv(&recs, &mut buf).unwrap();
            assert_eq!(records_from_csv(buf.as_slice()).unwrap(), recs);
        }
    }

    #[test]
    fn plans_for_other_data_are_rejected() {
        let ds = dataset();
        let plan = build_split_plan(&ds, SplitPolicy::Random, 2, 1, 0, 0.6).unwrap();
        let mut other = ds.clone();
        other.smiles[0] = "CCCl".into();
        let x = Array2::zeros((ds.len(), 2));
        assert!(run_repeated_cv(&other, x.view(), "m", &plan, &ForestConfig::default(), 0).is_err());
    }
}
