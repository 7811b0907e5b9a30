use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChemspaceError, Clustering};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    Random,
    Butina,
}

impl std::fmt::Display for SplitPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitPolicy::Random => "random",
            SplitPolicy::Butina => "butina",
        })
    }
}

impl std::str::FromStr for SplitPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SplitPolicy::Random),
            "butina" => Ok(SplitPolicy::Butina),
            other => Err(format!("unknown split policy `{other}`")),
        }
    }
}

/// Repeated k-fold assignment. `folds[r][f]` holds the (sorted) test rows of
/// fold `f` in repeat `r`; the training rows of a cell are all other rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub policy: SplitPolicy,
    pub n_folds: usize,
    pub n_repeats: usize,
    pub seed: u64,
    /// Hex SHA-256 of the dataset the plan was built for.
    pub dataset_hash: String,
    /// Rows eligible for evaluation, ascending.
    pub rows: Vec<usize>,
    pub folds: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Hash of a list of SMILES strings, used to tie a plan to its dataset.
pub fn dataset_hash<S: AsRef<str>>(smiles: &[S]) -> String {
    let mut h = Sha256::new();
    for s in smiles {
        h.update(s.as_ref().as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl SplitPlan {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.n_repeats * self.n_folds);
        for (r, folds) in self.folds.iter().enumerate() {
            for (f, test) in folds.iter().enumerate() {
                let train = self.rows.iter().copied().filter(|i| test.binary_search(i).is_err()).collect();
                out.push(Cell {
                    repeat: r,
                    fold: f,
                    train,
                    test: test.clone(),
                });
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<SplitPlan, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn check_folds(n_folds: usize, n_repeats: usize) -> Result<(), ChemspaceError> {
    if n_folds < 2 {
        return Err(ChemspaceError::InvalidFolds(n_folds));
    }
    if n_repeats < 1 {
        return Err(ChemspaceError::InvalidRepeats(n_repeats));
    }
    Ok(())
}

/// Shuffled k-fold per repeat; folds are contiguous chunks of the shuffled
/// order, the first `n % k` folds one row larger.
pub fn random_split_plan(
    rows: &[usize],
    n_folds: usize,
    n_repeats: usize,
    seed: u64,
    dataset_hash: &str,
) -> Result<SplitPlan, ChemspaceError> {
    check_folds(n_folds, n_repeats)?;
    if rows.len() < n_folds {
        return Err(ChemspaceError::TooFewRows(rows.len(), n_folds));
    }
    let mut sorted_rows = rows.to_vec();
    sorted_rows.sort_unstable();
    let mut folds = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let mut order = sorted_rows.clone();
        order.shuffle(&mut seed::rng(seed, "split-random", r as u64));
        let (base, extra) = (order.len() / n_folds, order.len() % n_folds);
        let mut start = 0;
        let mut rep = Vec::with_capacity(n_folds);
        for f in 0..n_folds {
            let size = base + usize::from(f < extra);
            let mut test = order[start..start + size].to_vec();
            test.sort_unstable();
            rep.push(test);
            start += size;
        }
        folds.push(rep);
    }
    Ok(SplitPlan {
        policy: SplitPolicy::Random,
        n_folds,
        n_repeats,
        seed,
        dataset_hash: dataset_hash.to_string(),
        rows: sorted_rows,
        folds,
    })
}

/// Cluster-grouped folds: per repeat, clusters are taken largest first
/// (equal sizes in a repeat-specific shuffled order) and each goes whole to
/// the currently smallest fold, lowest fold index on ties.
pub fn butina_split_plan(
    c: &Clustering,
    n_folds: usize,
    n_repeats: usize,
    seed: u64,
    dataset_hash: &str,
) -> Result<SplitPlan, ChemspaceError> {
    check_folds(n_folds, n_repeats)?;
    if c.clusters.len() < n_folds {
        return Err(ChemspaceError::TooFewClusters(c.clusters.len(), n_folds));
    }
    let mut rows: Vec<usize> = c.clusters.iter().flatten().copied().collect();
    rows.sort_unstable();
    let mut folds = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let mut order: Vec<usize> = (0..c.clusters.len()).collect();
        order.shuffle(&mut seed::rng(seed, "split-butina", r as u64));
        order.sort_by_key(|&ci| std::cmp::Reverse(c.clusters[ci].len()));
        let mut rep: Vec<Vec<usize>> = vec![Vec::new(); n_folds];
        for ci in order {
            let target = (0..n_folds).min_by_key(|&f| (rep[f].len(), f)).unwrap();
            rep[target].extend(c.clusters[ci].iter().copied());
        }
        rep.iter_mut().for_each(|f| f.sort_unstable());
        folds.push(rep);
    }
    Ok(SplitPlan {
        policy: SplitPolicy::Butina,
        n_folds,
        n_repeats,
        seed,
        dataset_hash: dataset_hash.to_string(),
        rows,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemspace::ClusterMethod;

    fn equal_clusters(k: usize, size: usize) -> Clustering {
        Clustering {
            clusters: (0..k).map(|c| (c * size..(c + 1) * size).collect()).collect(),
            method: ClusterMethod::Butina,
            threshold: 0.6,
        }
    }

    fn check_partition(plan: &SplitPlan) {
        for cell in plan.cells() {
            let mut all: Vec<usize> = cell.train.iter().chain(&cell.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, plan.rows);
            assert!(cell.test.iter().all(|t| cell.train.binary_search(t).is_err()));
        }
        for rep in &plan.folds {
            let mut all: Vec<usize> = rep.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, plan.rows);
        }
    }

    #[test]
    fn five_by_five_cells() {
        let rows: Vec<usize> = (0..53).collect();
        let plan = random_split_plan(&rows, 5, 5, 3, "h").unwrap();
        assert_eq!(plan.cells().len(), 25);
        check_partition(&plan);
        let plan = butina_split_plan(&equal_clusters(12, 4), 5, 5, 3, "h").unwrap();
        assert_eq!(plan.cells().len(), 25);
        check_partition(&plan);
    }

    #[test]
    fn equal_clusters_spread_two_per_fold() {
        let c = equal_clusters(10, 3);
        let plan = butina_split_plan(&c, 5, 5, 11, "h").unwrap();
        let labels = c.labels();
        for rep in &plan.folds {
            for fold in rep {
                let mut cl: Vec<usize> = fold.iter().map(|&i| labels[i]).collect();
                cl.dedup();
                assert_eq!(cl.len(), 2);
            }
        }
    }

    #[test]
    fn too_few_clusters() {
        assert!(matches!(
            butina_split_plan(&equal_clusters(4, 3), 5, 1, 0, "h"),
            Err(ChemspaceError::TooFewClusters(4, 5))
        ));
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let rows: Vec<usize> = (0..20).collect();
        let a = random_split_plan(&rows, 5, 2, 9, "h").unwrap();
        let b = random_split_plan(&rows, 5, 2, 9, "h").unwrap();
        assert_eq!(a, b);
        assert_eq!(SplitPlan::from_json(&a.to_json()).unwrap(), a);
        assert_ne!(a.folds[0], a.folds[1]);
    }
}
