use serde::{Deserialize, Serialize};

use crate::features::{tanimoto, Fingerprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Butina,
    /// Single-pass leader clustering used in place of BitBirch.
    BitbirchLike,
}

/// A partition of molecule indices. Clusters are sorted by descending size
/// (stable with respect to creation order) and the first member of each is
/// its centroid or leader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
    pub method: ClusterMethod,
    pub threshold: f64,
}

impl Clustering {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn n_items(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Cluster id per item.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![usize::MAX; self.n_items()];
        for (c, members) in self.clusters.iter().enumerate() {
            for &i in members {
                labels[i] = c;
            }
        }
        labels
    }

    fn sorted(mut clusters: Vec<Vec<usize>>, method: ClusterMethod, threshold: f64) -> Self {
        clusters.sort_by_key(|c| std::cmp::Reverse(c.len()));
        Clustering {
            clusters,
            method,
            threshold,
        }
    }
}

fn sim(fps: &[Fingerprint], i: usize, j: usize) -> f64 {
    tanimoto(&fps[i], &fps[j]).expect("fingerprints in one clustering share a width")
}

/// Neighbor lists at a similarity threshold (self excluded).
pub fn neighbor_lists(fps: &[Fingerprint], threshold: f64) -> Vec<Vec<usize>> {
    let n = fps.len();
    let mut nbrs = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if sim(fps, i, j) >= threshold {
                nbrs[i].push(j);
                nbrs[j].push(i);
            }
        }
    }
    for l in nbrs.iter_mut() {
        l.sort_unstable();
    }
    nbrs
}

/// Butina sphere-exclusion clustering.
///
/// Repeatedly picks the unassigned point with the most unassigned neighbors
/// (lowest index on ties) as centroid and assigns it together with all of
/// its unassigned neighbors.
pub fn butina_cluster(fps: &[Fingerprint], threshold: f64) -> Clustering {
    let n = fps.len();
    let nbrs = neighbor_lists(fps, threshold);
    let mut counts: Vec<usize> = nbrs.iter().map(Vec::len).collect();
    let mut assigned = vec![false; n];
    let mut remaining = n;
    let mut clusters = Vec::new();
    while remaining > 0 {
        let centroid = (0..n)
            .filter(|&i| !assigned[i])
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        let mut members = vec![centroid];
        members.extend(nbrs[centroid].iter().copied().filter(|&j| !assigned[j]));
        for &m in &members {
            assigned[m] = true;
            remaining -= 1;
            for &k in &nbrs[m] {
                counts[k] -= 1;
            }
        }
        clusters.push(members);
    }
    Clustering::sorted(clusters, ClusterMethod::Butina, threshold)
}

/// Leader clustering: each point joins the first existing leader with
/// similarity >= `threshold`, otherwise it becomes a leader itself. The
/// result depends on input order.
pub fn leader_cluster(fps: &[Fingerprint], threshold: f64) -> Clustering {
    let mut leaders: Vec<usize> = Vec::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..fps.len() {
        match leaders.iter().position(|&l| sim(fps, l, i) >= threshold) {
            Some(c) => clusters[c].push(i),
            None => {
                leaders.push(i);
                clusters.push(vec![i]);
            }
        }
    }
    Clustering::sorted(clusters, ClusterMethod::BitbirchLike, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fps(bits: &[&[usize]]) -> Vec<Fingerprint> {
        bits.iter().map(|b| Fingerprint::from_bits(64, b)).collect()
    }

    #[test]
    fn all_similar_single_cluster() {
        let f = fps(&[&[1, 2, 3], &[1, 2, 3], &[1, 2, 3, 4]]);
        let c = butina_cluster(&f, 0.6);
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].len(), 3);
    }

    #[test]
    fn all_dissimilar_singletons() {
        let f = fps(&[&[1], &[2], &[3], &[4]]);
        let c = butina_cluster(&f, 0.6);
        assert_eq!(c.clusters, vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn centroid_first() {
        // 1 is similar to both 0 and 2, which are not similar to each other
        let f = fps(&[&[1, 2], &[1, 2, 3], &[2, 3]]);
        let c = butina_cluster(&f, 0.6);
        assert_eq!(c.clusters, vec![vec![1, 0, 2]]);
    }

    #[test]
    fn leader_examples() {
        let f = fps(&[&[1, 2], &[1, 2], &[1, 2]]);
        assert_eq!(leader_cluster(&f, 0.9).clusters, vec![vec![0, 1, 2]]);
        let f = fps(&[&[1, 2], &[1, 3], &[1, 2], &[4]]);
        let c = leader_cluster(&f, 1.0 + 1e-9);
        assert_eq!(c.clusters.len(), 4);
        let c = leader_cluster(&f, 1.0);
        assert_eq!(c.clusters, vec![vec![0, 2], vec![1], vec![3]]);
        assert_eq!(leader_cluster(&f, 0.3), leader_cluster(&f, 0.3));
    }
}
