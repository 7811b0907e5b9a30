use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{ChemspaceError, Clustering};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub fraction: f64,
    pub seed: u64,
    /// Selected item indices, ascending.
    pub indices: Vec<usize>,
    /// Quota per cluster, aligned with `Clustering::clusters`.
    pub per_cluster_quota: Vec<usize>,
}

/// Round half up, tolerant of representation error (0.3 * 5 = 1.4999...).
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Samples `round(fraction * |cluster|)` members from every cluster without
/// replacement.
pub fn proportional_subset(c: &Clustering, fraction: f64, seed: u64) -> Result<SubsetSelection, ChemspaceError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(ChemspaceError::InvalidFraction(fraction));
    }
    let mut indices = Vec::new();
    let mut quotas = Vec::with_capacity(c.clusters.len());
    for (ci, members) in c.clusters.iter().enumerate() {
        let quota = round_half_up(fraction * members.len() as f64).min(members.len());
        quotas.push(quota);
        let mut rng = seed::rng(seed, "subset", ci as u64);
        let picked = sample(&mut rng, members.len(), quota);
        indices.extend(picked.into_iter().map(|k| members[k]));
    }
    indices.sort_unstable();
    Ok(SubsetSelection {
        fraction,
        seed,
        indices,
        per_cluster_quota: quotas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemspace::ClusterMethod;

    fn clustering(sizes: &[usize]) -> Clustering {
        let mut next = 0;
        let clusters = sizes
            .iter()
            .map(|&s| {
                let c: Vec<usize> = (next..next + s).collect();
                next += s;
                c
            })
            .collect();
        Clustering {
            clusters,
            method: ClusterMethod::Butina,
            threshold: 0.6,
        }
    }

    #[test]
    fn exact_proportionality() {
        let s = proportional_subset(&clustering(&[10, 10]), 0.3, 1).unwrap();
        assert_eq!(s.per_cluster_quota, vec![3, 3]);
        assert_eq!(s.indices.len(), 6);
        assert_eq!(s.indices.iter().filter(|&&i| i < 10).count(), 3);
    }

    #[test]
    fn boundaries() {
        let c = clustering(&[4, 3, 1]);
        assert!(proportional_subset(&c, 0.0, 1).unwrap().indices.is_empty());
        assert_eq!(proportional_subset(&c, 1.0, 1).unwrap().indices, (0..8).collect::<Vec<_>>());
        assert!(proportional_subset(&c, 1.5, 1).is_err());
    }

    #[test]
    fn half_up_rounding() {
        let s = proportional_subset(&clustering(&[7, 3]), 0.5, 9).unwrap();
        assert_eq!(s.per_cluster_quota, vec![4, 2]);
        assert_eq!(s.indices.len(), 6);
        assert_eq!(round_half_up(0.3 * 5.0), 2);
    }

    #[test]
    fn seeded() {
        let c = clustering(&[20, 13, 7]);
        assert_eq!(proportional_subset(&c, 0.3, 5), proportional_subset(&c, 0.3, 5));
        assert_ne!(
            proportional_subset(&c, 0.3, 5).unwrap().indices,
            proportional_subset(&c, 0.3, 6).unwrap().indices
        );
    }
}
