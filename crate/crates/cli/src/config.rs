//! Run configuration: one TOML file with a section per stage. Every value
//! can also be given as a flag, and flags win.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{config_err, Kind, KindExt};

macro_rules! opts {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $f:ident: $t:ty,)* }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, clap::Args, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$fm])* #[arg(long)] pub $f: Option<$t>,)*
        }

        impl $name {
            /// Flag values, falling back to the file's.
            pub fn or(&self, file: &Self) -> Self {
                Self { $($f: self.$f.clone().or_else(|| file.$f.clone()),)* }
            }
        }
    };
}

opts!(ToyOpts {
    /// Labeled molecules in the synthetic dataset.
    n_dataset: usize,
    /// Unlabeled pre-training molecules.
    n_corpus: usize,
    /// Standard deviation of the target noise.
    noise: f64,
    /// Quantile of the target used as the censoring limit.
    censor_quantile: f64,
    seed: u64,
});

opts!(TokenizerOpts {
    vocab_size: usize,
    min_frequency: u64,
});

opts!(SubsetOpts {
    /// Share of each cluster to keep, in [0, 1].
    fraction: f64,
    /// Tanimoto similarity threshold for clustering.
    threshold: f64,
    /// `bitbirch_like` (leader) or `butina`.
    method: String,
    seed: u64,
});

opts!(EncoderOpts {
    /// `desk` or `paper`.
    preset: String,
    layers: usize,
    heads: usize,
    hidden_dim: usize,
    ff_dim: usize,
    max_len: usize,
    dropout_rate: f64,
    head_dropout: f64,
    init_std: f64,
    /// `pre` or `post`.
    ln_placement: String,
});

opts!(TrainOpts {
    /// `mlm`, `mtr` or `cl`.
    objective: String,
    epochs: usize,
    batch_size: usize,
    /// Peak learning rate.
    lr: f64,
    seed: u64,
    /// `standard` or `paper_literal`.
    cl_variant: String,
    mask_rate: f64,
});

opts!(EmbedOpts {
    /// `cls` or `mean`.
    pooling: String,
});

opts!(EvaluateOpts {
    /// Name recorded with every metric row.
    model: String,
    /// `random` or `butina`.
    splits: String,
    folds: usize,
    repeats: usize,
    /// Butina similarity threshold.
    threshold: f64,
    seed: u64,
    /// Pooling when embedding from a checkpoint.
    pooling: String,
    n_trees: usize,
    max_depth: usize,
    min_samples_split: usize,
    max_features: usize,
});

opts!(CompareOpts {
    /// MAE, RMSE, R2, Pearson or Spearman.
    metric: String,
});

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Fallback seed for every stage.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub toy: ToyOpts,
    #[serde(default)]
    pub tokenizer: TokenizerOpts,
    #[serde(default)]
    pub subset: SubsetOpts,
    #[serde(default)]
    pub encoder: EncoderOpts,
    #[serde(default)]
    pub pretrain: TrainOpts,
    #[serde(default)]
    pub adapt: TrainOpts,
    #[serde(default)]
    pub embed: EmbedOpts,
    #[serde(default)]
    pub evaluate: EvaluateOpts,
    #[serde(default)]
    pub compare: CompareOpts,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .kind(Kind::Config)?;
        toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .kind(Kind::Config)
    }
}

/// Parses a value through its serde name, e.g. `"bitbirch_like"`.
pub fn parse_name<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| config_err(format!("unknown {what} `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: FileConfig = toml::from_str("seed = 3\n[pretrain]\nepochs = 7\nlr = 0.001\n").unwrap();
        let flags = TrainOpts {
            epochs: Some(2),
            ..TrainOpts::default()
        };
        let m = flags.or(&file.pretrain);
        assert_eq!((m.epochs, m.lr, m.batch_size), (Some(2), Some(0.001), None));
        assert_eq!(file.seed, Some(3));
        assert!(toml::from_str::<FileConfig>("[pretrain]\nepoch = 7\n").is_err());
        let p: moldapt::chemspace::ClusterMethod = parse_name("method", "bitbirch_like").unwrap();
        assert_eq!(p, moldapt::chemspace::ClusterMethod::BitbirchLike);
        assert!(parse_name::<moldapt::chemspace::ClusterMethod>("method", "kmeans").is_err());
    }
}
