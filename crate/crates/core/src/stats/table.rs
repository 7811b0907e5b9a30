use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::chemspace::SplitPolicy;
use crate::downstream::{MetricName, MetricRecord};

/// One CV cell, the unit that pairs observations across models.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub policy: SplitPolicy,
    pub repeat: usize,
    pub fold: usize,
}

/// Complete models × cells table of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub metric: MetricName,
    pub models: Vec<String>,
    pub cells: Vec<CellKey>,
    /// `values[model][cell]`.
    pub values: Vec<Vec<f64>>,
}

impl MetricTable {
    /// Collects `metric` for `models` from `records`. Every model must
    /// have a defined value on exactly the same set of cells.
    pub fn from_records(records: &[MetricRecord], models: &[String], metric: MetricName) -> Result<Self, StatsError> {
        if models.is_empty() {
            return Err(StatsError::InvalidArgument("no models given".into()));
        }
        let mut per_model: Vec<BTreeMap<CellKey, f64>> = vec![BTreeMap::new(); models.len()];
        for r in records.iter().filter(|r| r.metric == metric) {
            let Some(m) = models.iter().position(|m| *m == r.model) else {
                continue;
            };
            let key = CellKey {
                dataset: r.dataset.clone(),
                policy: r.policy,
                repeat: r.repeat,
                fold: r.fold,
            };
            let Some(v) = r.value else {
                return Err(StatsError::IncompleteTable(format!(
                    "{metric} undefined for model {} at {key:?}",
                    r.model
                )));
            };
            if per_model[m].insert(key.clone(), v).is_some() {
                return Err(StatsError::InvalidArgument(format!("duplicate record for {} at {key:?}", r.model)));
            }
        }
        let cells: Vec<CellKey> = per_model[0].keys().cloned().collect();
        if cells.is_empty() {
            return Err(StatsError::IncompleteTable(format!("no {metric} records for model {}", models[0])));
        }
        for (m, map) in per_model.iter().enumerate() {
            if let Some(c) = cells.iter().find(|c| !map.contains_key(*c)) {
                return Err(StatsError::IncompleteTable(format!("model {} has no record at {c:?}", models[m])));
            }
            if let Some(c) = map.keys().find(|c| !per_model[0].contains_key(*c)) {
                return Err(StatsError::IncompleteTable(format!("model {} has no record at {c:?}", models[0])));
            }
        }
        Ok(MetricTable {
            metric,
            models: models.to_vec(),
            values: per_model.into_iter().map(|m| m.into_values().collect()).collect(),
            cells,
        })
    }

    pub fn model_means(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect()
    }
}

#[cfg(test)]
pub(crate) fn records_for(model: &str, metric: MetricName, values: &[f64]) -> Vec<MetricRecord> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| MetricRecord {
            model: model.into(),
            dataset: "d".into(),
            policy: SplitPolicy::Random,
            repeat: i / 5,
            fold: i % 5,
            metric,
            value: Some(v),
        })
        .collect()
}
