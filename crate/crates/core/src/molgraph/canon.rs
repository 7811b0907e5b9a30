//! Canonical atom ranking by iterative neighborhood refinement.
//!
//! Atoms start from the invariant tuple (element, degree, charge, hydrogen
//! count, aromatic flag, isotope). Each round re-ranks atoms by their
//! current rank plus the sorted multiset of (neighbor rank, bond order)
//! until the number of classes stops growing. Remaining ties are broken by
//! promoting one atom of the lowest tied class and refining again.

use super::Molecule;

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).unwrap()).collect()
}

fn n_classes(ranks: &[usize]) -> usize {
    let mut r = ranks.to_vec();
    r.sort_unstable();
    r.dedup();
    r.len()
}

pub(crate) fn initial_ranks(m: &Molecule) -> Vec<usize> {
    let keys: Vec<(u8, usize, i8, u8, bool, u16)> = (0..m.num_atoms())
        .map(|i| {
            let a = &m.atoms()[i];
            (
                a.element.atomic_number(),
                m.degree(i),
                a.formal_charge,
                m.hydrogens(i),
                a.aromatic,
                a.isotope.unwrap_or(0),
            )
        })
        .collect();
    dense_ranks(&keys)
}

/// Refines `ranks` to a stable partition.
pub(crate) fn refine(m: &Molecule, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = n_classes(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..m.num_atoms())
            .map(|i| {
                let mut nb: Vec<(usize, u8)> = m
                    .neighbors(i)
                    .iter()
                    .map(|&(j, b)| (ranks[j], m.bonds()[b].order.code()))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = n_classes(&next);
        ranks = next;
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
    }
}

/// Splits `atom` out of its tied class, ranking it first within the class.
pub(crate) fn break_tie(ranks: &[usize], atom: usize) -> Vec<usize> {
    let keys: Vec<(usize, bool)> = ranks.iter().enumerate().map(|(i, &r)| (r, i != atom)).collect();
    dense_ranks(&keys)
}

/// Lowest rank value shared by more than one atom, with its members.
pub(crate) fn lowest_tie(ranks: &[usize]) -> Option<Vec<usize>> {
    let mut counts = vec![0usize; ranks.len()];
    for &r in ranks {
        counts[r] += 1;
    }
    let r = counts.iter().position(|&c| c > 1)?;
    Some((0..ranks.len()).filter(|&i| ranks[i] == r).collect())
}

/// Canonical ranks using lowest-index tie breaking. Atoms that refinement
/// cannot separate are symmetric in all practical cases, so the choice
/// does not change the written string; `canonical_smiles` additionally
/// explores the alternatives and keeps the smallest string.
pub fn canonical_ranks(m: &Molecule) -> Vec<usize> {
    let mut ranks = refine(m, initial_ranks(m));
    while let Some(tied) = lowest_tie(&ranks) {
        ranks = refine(m, break_tie(&ranks, tied[0]));
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    #[test]
    fn ranks_are_a_permutation() {
        for s in ["CCO", "c1ccccc1", "CC(C)(C)C", "OC(=O)c1ccccc1N"] {
            let m = parse_smiles(s).unwrap();
            let mut r = canonical_ranks(&m);
            r.sort_unstable();
            assert_eq!(r, (0..m.num_atoms()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn refinement_separates_ethanol_atoms() {
        let m = parse_smiles("CCO").unwrap();
        assert_eq!(n_classes(&refine(&m, initial_ranks(&m))), 3);
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(n_classes(&refine(&m, initial_ranks(&m))), 1);
    }
}
