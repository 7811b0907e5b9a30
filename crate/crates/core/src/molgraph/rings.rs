//! Smallest set of smallest rings via Horton candidate cycles and GF(2)
//! elimination.

use std::collections::VecDeque;

use super::Bond;

type EdgeSet = Vec<u64>;

fn set_bit(s: &mut EdgeSet, i: usize) {
    s[i / 64] ^= 1 << (i % 64);
}

/// Bonds that are not bridges lie on a cycle.
fn cyclic_bonds(n: usize, adjacency: &[Vec<(usize, usize)>], n_bonds: usize) -> Vec<bool> {
    // Iterative Tarjan bridge finding.
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut cyclic = vec![true; n_bonds];
    let mut timer = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (node, parent bond, next neighbor position)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (u, pb, ref mut pos)) = stack.last_mut() {
            if *pos < adjacency[u].len() {
                let (v, b) = adjacency[u][*pos];
                *pos += 1;
                if b == pb {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, b, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        cyclic[pb] = false;
                    }
                }
            }
        }
    }
    cyclic
}

pub(crate) fn sssr(n: usize, bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) -> Vec<Vec<usize>> {
    let cyclic = cyclic_bonds(n, adjacency, bonds.len());
    let n_cyclic = cyclic.iter().filter(|&&c| c).count();
    if n_cyclic == 0 {
        return Vec::new();
    }
    let mut ring_atom = vec![false; n];
    for (b, bond) in bonds.iter().enumerate() {
        if cyclic[b] {
            ring_atom[bond.a] = true;
            ring_atom[bond.b] = true;
        }
    }
    let n_ring_atoms = ring_atom.iter().filter(|&&r| r).count();
    // Cyclomatic number of the ring subgraph (components counted below).
    let ring_adj: Vec<Vec<(usize, usize)>> = adjacency
        .iter()
        .map(|nbrs| nbrs.iter().copied().filter(|&(_, b)| cyclic[b]).collect())
        .collect();
    let mut components = 0;
    let mut seen = vec![false; n];
    for s in 0..n {
        if !ring_atom[s] || seen[s] {
            continue;
        }
        components += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &ring_adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    let target = n_cyclic + components - n_ring_atoms;

    let words = bonds.len().div_ceil(64);
    let mut candidates: Vec<(usize, EdgeSet, Vec<usize>)> = Vec::new();
    for v in (0..n).filter(|&v| ring_atom[v]) {
        // BFS tree within the ring subgraph
        let mut dist = vec![usize::MAX; n];
        let mut parent = vec![(usize::MAX, usize::MAX); n];
        let mut queue = VecDeque::new();
        dist[v] = 0;
        queue.push_back(v);
        while let Some(u) = queue.pop_front() {
            for &(w, b) in &ring_adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    parent[w] = (u, b);
                    queue.push_back(w);
                }
            }
        }
        let path = |mut x: usize| {
            let mut atoms = vec![x];
            let mut edges = Vec::new();
            while x != v {
                let (p, b) = parent[x];
                edges.push(b);
                atoms.push(p);
                x = p;
            }
            (atoms, edges)
        };
        for (b, bond) in bonds.iter().enumerate() {
            if !cyclic[b] {
                continue;
            }
            let (x, y) = (bond.a, bond.b);
            if dist[x] == usize::MAX || dist[y] == usize::MAX || parent[x].1 == b || parent[y].1 == b {
                continue;
            }
            let (px, ex) = path(x);
            let (py, ey) = path(y);
            // paths may share only v
            let disjoint = px[..px.len() - 1].iter().all(|a| !py[..py.len() - 1].contains(a));
            if !disjoint {
                continue;
            }
            let mut set = vec![0u64; words];
            for &e in ex.iter().chain(ey.iter()) {
                set_bit(&mut set, e);
            }
            set_bit(&mut set, b);
            // ordered atom cycle: v .. x, y .. (back to v)
            let mut cycle: Vec<usize> = px.iter().rev().copied().collect();
            cycle.extend(py[..py.len() - 1].iter().copied());
            candidates.push((cycle.len(), set, cycle));
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    candidates.dedup_by(|a, b| a.1 == b.1);

    // Greedy independent selection with an incrementally reduced basis.
    let mut basis: Vec<(usize, EdgeSet)> = Vec::new();
    let mut rings = Vec::new();
    for (_, set, cycle) in candidates {
        if rings.len() == target {
            break;
        }
        let mut r = set.clone();
        for (pivot, bset) in &basis {
            if r[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (w, bw) in r.iter_mut().zip(bset) {
                    *w ^= bw;
                }
            }
        }
        if let Some(pivot) = (0..bonds.len()).find(|&i| r[i / 64] >> (i % 64) & 1 == 1) {
            // keep the basis fully reduced on the new pivot
            for (_, bset) in basis.iter_mut() {
                if bset[pivot / 64] >> (pivot % 64) & 1 == 1 {
                    for (w, rw) in bset.iter_mut().zip(&r) {
                        *w ^= rw;
                    }
                }
            }
            basis.push((pivot, r));
            rings.push(normalize_cycle(cycle));
        }
    }
    rings.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    rings
}

fn normalize_cycle(cycle: Vec<usize>) -> Vec<usize> {
    let n = cycle.len();
    let (start, _) = cycle.iter().enumerate().min_by_key(|&(_, &a)| a).unwrap();
    let next = cycle[(start + 1) % n];
    let prev = cycle[(start + n - 1) % n];
    let mut out = Vec::with_capacity(n);
    if next <= prev {
        for k in 0..n {
            out.push(cycle[(start + k) % n]);
        }
    } else {
        for k in 0..n {
            out.push(cycle[(start + n - k) % n]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use crate::molgraph::parse_smiles;

    fn sizes(s: &str) -> Vec<usize> {
        parse_smiles(s).unwrap().rings().iter().map(|r| r.len()).collect()
    }

    #[test]
    fn ring_counts_match_cyclomatic_number() {
        assert_eq!(sizes("CCO"), Vec::<usize>::new());
        assert_eq!(sizes("C1CCCCC1"), vec![6]);
        assert_eq!(sizes("c1ccc2ccccc2c1"), vec![6, 6]);
        assert_eq!(sizes("C1CC2CCC1C2"), vec![5, 5]); // norbornane
        assert_eq!(sizes("C12C3C4C1C5C2C3C45"), vec![4, 4, 4, 4, 4]); // cubane
        assert_eq!(sizes("C1CC1CCC1CCCC1"), vec![3, 5]);
        assert_eq!(sizes("c1ccc2c(c1)ccc1ccccc12"), vec![6, 6, 6]); // phenanthrene
    }

    #[test]
    fn rings_are_normalized() {
        let m = parse_smiles("C1CCC1").unwrap();
        assert_eq!(m.rings(), &[vec![0, 1, 2, 3]]);
        let m = parse_smiles("OC1CCC1").unwrap();
        assert_eq!(m.rings(), &[vec![1, 2, 3, 4]]);
    }
}
