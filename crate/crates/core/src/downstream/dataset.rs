use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DownstreamError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    Log10,
    NegLog10,
    Ln,
}

impl Transform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::None => v,
            Transform::Log10 => v.log10(),
            Transform::NegLog10 => -v.log10(),
            Transform::Ln => v.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorDirection {
    /// Values at or above the threshold are censored.
    Above,
    /// Values at or below the threshold are censored.
    Below,
}

/// Detection limit of an assay, on the transformed scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensorRule {
    pub value: f64,
    pub direction: CensorDirection,
}

impl CensorRule {
    pub fn is_censored(&self, v: f64) -> bool {
        match self.direction {
            CensorDirection::Above => v >= self.value,
            CensorDirection::Below => v <= self.value,
        }
    }
}

/// TOML description of a labeled dataset, e.g.
///
/// ```toml
/// name = "solubility"
/// transform = "log10"
/// [censor]
/// value = 2.0
/// direction = "above"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default)]
    pub censor: Option<CensorRule>,
}

impl DatasetConfig {
    pub fn from_toml(text: &str) -> Result<Self, DownstreamError> {
        toml::from_str(text).map_err(|e| DownstreamError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    pub ids: Vec<String>,
    pub smiles: Vec<String>,
    pub target: Vec<f64>,
    pub censored: Vec<bool>,
}

#[derive(Deserialize)]
struct CsvRow {
    smiles: String,
    target: f64,
    #[serde(default)]
    id: Option<String>,
}

impl LabeledDataset {
    /// Applies the configured transform and flags censored rows. Every
    /// transformed target must be finite.
    pub fn new(
        config: &DatasetConfig,
        ids: Vec<String>,
        smiles: Vec<String>,
        raw: &[f64],
    ) -> Result<LabeledDataset, DownstreamError> {
        if ids.len() != smiles.len() || raw.len() != smiles.len() {
            return Err(DownstreamError::Shape(format!(
                "{} ids, {} smiles, {} targets",
                ids.len(),
                smiles.len(),
                raw.len()
            )));
        }
        let mut target = Vec::with_capacity(raw.len());
        for (row, &v) in raw.iter().enumerate() {
            let t = config.transform.apply(v);
            if !t.is_finite() {
                return Err(DownstreamError::BadRow {
                    row,
                    msg: format!("target {v} is not finite after {:?}", config.transform),
                });
            }
            target.push(t);
        }
        let censored = target
            .iter()
            .map(|&t| config.censor.is_some_and(|c| c.is_censored(t)))
            .collect();
        Ok(LabeledDataset {
            name: config.name.clone(),
            ids,
            smiles,
            target,
            censored,
        })
    }

    /// Reads a CSV with columns `smiles`, `target` and optionally `id`.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, config: &DatasetConfig) -> Result<Self, DownstreamError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let (mut ids, mut smiles, mut raw) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.deserialize::<CsvRow>().enumerate() {
            let rec = rec.map_err(|e| DownstreamError::BadRow { row, msg: e.to_string() })?;
            ids.push(rec.id.unwrap_or_else(|| row.to_string()));
            smiles.push(rec.smiles);
            raw.push(rec.target);
        }
        Self::new(config, ids, smiles, &raw)
    }

    pub fn from_csv(path: &Path, config: &DatasetConfig) -> Result<Self, DownstreamError> {
        Self::from_csv_reader(std::fs::File::open(path)?, config)
    }

    /// Writes the transformed targets; reading back needs a config without
    /// a transform.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<(), DownstreamError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["id", "smiles", "target"])?;
        for i in 0..self.len() {
            wr.write_record([self.ids[i].as_str(), self.smiles[i].as_str(), &self.target[i].to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.smiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smiles.is_empty()
    }

    /// Rows usable for evaluation (censored rows removed).
    pub fn evaluation_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.censored[i]).collect()
    }

    /// Unlabeled corpus for domain adaptation: every molecule, censored
    /// or not.
    pub fn da_corpus(&self) -> Vec<String> {
        self.smiles.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "smiles,target,id\nCCO,10,a\nCCN,100,b\nCCC,1000,c\n";

    #[test]
    fn transform_and_censor() {
        let cfg = DatasetConfig::from_toml("name = \"t\"\ntransform = \"log10\"\n[censor]\nvalue = 3.0\ndirection = \"above\"\n").unwrap();
        let ds = LabeledDataset::from_csv_reader(CSV.as_bytes(), &cfg).unwrap();
        assert_eq!(ds.target, vec![1.0, 2.0, 3.0]);
        assert_eq!(ds.censored, vec![false, false, true]);
        assert_eq!(ds.evaluation_rows(), vec![0, 1]);
        assert_eq!(ds.da_corpus().len(), 3);
        assert_eq!(ds.ids, vec!["a", "b", "c"]);
        let back = DatasetConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn non_finite_targets_rejected() {
        let cfg = DatasetConfig {
            name: "t".into(),
            transform: Transform::Log10,
            censor: None,
        };
        let err = LabeledDataset::from_csv_reader("smiles,target\nCCO,0\n".as_bytes(), &cfg).unwrap_err();
        assert!(matches!(err, DownstreamError::BadRow { row: 0, .. }));
        assert!(DatasetConfig::from_toml("name = \"x\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn below_rule_and_missing_ids() {
        let cfg = DatasetConfig {
            name: "t".into(),
            transform: Transform::None,
            censor: Some(CensorRule {
                value: 10.0,
                direction: CensorDirection::Below,
            }),
        };
        let ds = LabeledDataset::from_csv_reader("smiles,target\nCCO,10\nCCN,11\n".as_bytes(), &cfg).unwrap();
        assert_eq!(ds.censored, vec![true, false]);
        assert_eq!(ds.ids, vec!["0", "1"]);
    }
}
