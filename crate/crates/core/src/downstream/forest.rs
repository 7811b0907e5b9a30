use std::cmp::Ordering;

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DownstreamError;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features tried per split; `None` tries all of them.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64, samples: usize },
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub seed: u64,
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean of the tree predictions.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, DownstreamError> {
        if x.ncols() != self.n_features {
            return Err(DownstreamError::Shape(format!(
                "{} features, model trained on {}",
                x.ncols(),
                self.n_features
            )));
        }
        let k = self.trees.len() as f64;
        Ok(x.rows()
            .into_iter()
            .map(|row| self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k)
            .collect())
    }
}

/// Training rows in a canonical order (features, then target), so a fitted
/// forest does not depend on the order rows were supplied in.
struct Data {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
    /// Per feature, row indices sorted by value.
    sorted: Vec<Vec<u32>>,
}

impl Data {
    fn new(x: ArrayView2<f64>, y: &[f64]) -> Data {
        let (n, p) = x.dim();
        let cmp_rows = |a: &usize, b: &usize| {
            x.row(*a)
                .iter()
                .zip(x.row(*b).iter())
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or_else(|| y[*a].total_cmp(&y[*b]))
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(cmp_rows);
        let xs: Vec<f64> = order.iter().flat_map(|&i| x.row(i).to_vec()).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let sorted = (0..p)
            .map(|j| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| xs[a as usize * p + j].total_cmp(&xs[b as usize * p + j]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Data { x: xs, y: ys, p, sorted }
    }

    fn at(&self, row: u32, j: usize) -> f64 {
        self.x[row as usize * self.p + j]
    }
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Pending {
    node: usize,
    lists: Vec<Vec<u32>>,
    depth: usize,
}

fn grow(data: &Data, weight: &[u32], hp: &ForestConfig, tree_seed: u64) -> Tree {
    let mut rng = seed::rng(tree_seed, "features", 0);
    let root: Vec<Vec<u32>> = data
        .sorted
        .iter()
        .map(|s| s.iter().copied().filter(|&r| weight[r as usize] > 0).collect())
        .collect();
    let mut nodes = vec![Node::Leaf { value: 0.0, samples: 0 }];
    let mut stack = vec![Pending {
        node: 0,
        lists: root,
        depth: 0,
    }];
    let mut left_side = vec![false; data.y.len()];
    while let Some(Pending { node, lists, depth }) = stack.pop() {
        let rows = &lists[0];
        let (mut n, mut sum) = (0u64, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in rows {
            let (w, v) = (weight[r as usize], data.y[r as usize]);
            n += w as u64;
            sum += w as f64 * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let leaf = Node::Leaf {
            value: sum / n as f64,
            samples: n as usize,
        };
        let too_small = (n as usize) < hp.min_samples_split.max(2);
        if too_small || lo == hi || hp.max_depth.is_some_and(|d| depth >= d) {
            nodes[node] = leaf;
            continue;
        }
        let features: Vec<usize> = match hp.max_features {
            Some(m) if m < data.p => {
                let mut f = sample(&mut rng, data.p, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..data.p).collect(),
        };
        let mut best: Option<Best> = None;
        for &j in &features {
            let list = &lists[j];
            let (mut nl, mut sl) = (0u64, 0.0);
            for pair in list.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                let w = weight[a as usize];
                nl += w as u64;
                sl += w as f64 * data.y[a as usize];
                let (xa, xb) = (data.at(a, j), data.at(b, j));
                if xa == xb {
                    continue;
                }
                let nr = n - nl;
                let sr = sum - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64;
                if best.as_ref().is_none_or(|bst| gain > bst.gain) {
                    let mut threshold = xa + (xb - xa) / 2.0;
                    if threshold >= xb {
                        threshold = xa;
                    }
                    best = Some(Best {
                        gain,
                        feature: j,
                        threshold,
                    });
                }
            }
        }
        // identical inputs with differing targets: nothing separates them
        let Some(best) = best else {
            nodes[node] = leaf;
            continue;
        };
        for &r in rows {
            left_side[r as usize] = data.at(r, best.feature) <= best.threshold;
        }
        let (mut ll, mut rl) = (Vec::with_capacity(lists.len()), Vec::with_capacity(lists.len()));
        for list in &lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&r| left_side[r as usize]);
            ll.push(l);
            rl.push(r);
        }
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: 0.0, samples: 0 });
        nodes.push(Node::Leaf { value: 0.0, samples: 0 });
        nodes[node] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: li,
            right: ri,
        };
        stack.push(Pending {
            node: ri,
            lists: rl,
            depth: depth + 1,
        });
        stack.push(Pending {
            node: li,
            lists: ll,
            depth: depth + 1,
        });
    }
    Tree { seed: tree_seed, nodes }
}

/// Bagged CART regression trees. Each tree draws `N` rows with replacement
/// from `seed`-derived streams and splits on the largest reduction of the
/// summed squared error over every feature and midpoint threshold; ties go
/// to the lowest feature, then the lowest threshold.
pub fn fit_forest(x: ArrayView2<f64>, y: &[f64], hp: &ForestConfig, seed: u64) -> Result<ForestModel, DownstreamError> {
    let n = x.nrows();
    if n < 2 {
        return Err(DownstreamError::TooFewRows { need: 2, got: n });
    }
    if y.len() != n {
        return Err(DownstreamError::Shape(format!("{} targets for {n} rows", y.len())));
    }
    if hp.n_trees == 0 {
        return Err(DownstreamError::Config("forest needs at least one tree".into()));
    }
    if let Some((i, _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(DownstreamError::BadRow {
            row: i.0,
            msg: format!("non-finite feature {}", i.1),
        });
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(DownstreamError::BadRow {
            row,
            msg: "non-finite target".into(),
        });
    }
    let data = Data::new(x, y);
    let trees = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = seed::derive(seed, "tree", t as u64);
            let mut weight = vec![0u32; n];
            if hp.bootstrap {
                let mut rng = seed::rng(tree_seed, "bootstrap", 0);
                for _ in 0..n {
                    weight[rng.random_range(0..n)] += 1;
                }
            } else {
                weight.fill(1);
            }
            grow(&data, &weight, hp, tree_seed)
        })
        .collect();
    Ok(ForestModel {
        config: *hp,
        n_features: x.ncols(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Axis};
    use rand_distr::{Distribution, StandardNormal};

    fn single_tree() -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            bootstrap: false,
            ..ForestConfig::default()
        }
    }

    #[test]
    fn unbootstrapped_tree_memorizes() {
        let mut rng = seed::rng(1, "t", 0);
        let x = Array2::from_shape_simple_fn((60, 4), || rng.random::<f64>());
        let y: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let m = fit_forest(x.view(), &y, &single_tree(), 0).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), y);
    }

    #[test]
    fn constant_target() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * (j + 1)) as f64);
        let y = vec![2.5; 10];
        let m = fit_forest(x.view(), &y, &ForestConfig::default(), 3).unwrap();
        assert!(m.predict(x.view()).unwrap().iter().all(|&v| v == 2.5));
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn identical_inputs_become_a_mean_leaf() {
        let x = Array2::<f64>::zeros((4, 3));
        let m = fit_forest(x.view(), &[1.0, 2.0, 3.0, 6.0], &single_tree(), 0).unwrap();
        assert_eq!(m.trees[0].nodes, vec![Node::Leaf { value: 3.0, samples: 4 }]);
    }

    #[test]
    fn tie_break_prefers_lowest_feature_and_midpoint() {
        // both features separate the targets perfectly
        let x = Array2::from_shape_vec((4, 2), vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0, 3.0, 13.0]).unwrap();
        let m = fit_forest(x.view(), &[0.0, 0.0, 1.0, 1.0], &single_tree(), 0).unwrap();
        match m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => assert_eq!((feature, threshold), (0, 1.5)),
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut rng = seed::rng(2, "t", 0);
        let x = Array2::from_shape_simple_fn((80, 5), || (rng.random::<f64>() * 4.0).round());
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] + 0.5 * r[3]).collect();
        let hp = ForestConfig {
            n_trees: 8,
            ..ForestConfig::default()
        };
        let a = fit_forest(x.view(), &y, &hp, 11).unwrap();
        let perm: Vec<usize> = (0..80).rev().collect();
        let xp = x.select(Axis(0), &perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let b = fit_forest(xp.view(), &yp, &hp, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recovers_a_sparse_linear_signal() {
        let mut rng = seed::rng(5, "t", 0);
        let normal = |r: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(r) };
        let gen = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let x = Array2::from_shape_simple_fn((n, 16), || normal(rng));
            let y: Vec<f64> = x
                .rows()
                .into_iter()
                .map(|r| 2.0 * r[1] - 1.5 * r[4] + r[9] + 0.1 * normal(rng))
                .collect();
            (x, y)
        };
        let (x, y) = gen(&mut rng, 500);
        let (xt, yt) = gen(&mut rng, 200);
        let m = fit_forest(x.view(), &y, &ForestConfig::default(), 0).unwrap();
        let pred = m.predict(xt.view()).unwrap();
        let r2 = crate::downstream::compute_metrics(&yt, &pred).unwrap().r2.unwrap();
        assert!(r2 >= 0.8, "R2 {r2}");
    }

    #[test]
    fn rejects_bad_input() {
        let x = Array2::<f64>::zeros((1, 2));
        assert!(fit_forest(x.view(), &[1.0], &ForestConfig::default(), 0).is_err());
        let mut x = Array2::<f64>::zeros((3, 2));
        x[[1, 1]] = f64::NAN;
        assert!(matches!(
            fit_forest(x.view(), &[1.0, 2.0, 3.0], &ForestConfig::default(), 0),
            Err(DownstreamError::BadRow { row: 1, .. })
        ));
    }
}
