//! Randomized SMILES of a molecule must describe the same graph and
//! collapse to one canonical string. Graph identity is checked with
//! petgraph's VF2 isomorphism, independent of our canonical ranking.

use std::sync::OnceLock;

use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::UnGraph;
use proptest::prelude::*;

use moldapt::molgraph::{canonical_smiles, enumerate_smiles, parse_smiles, Molecule};
use moldapt::toy::generate_smiles;

type Label = (u8, bool, i8, u8, Option<u16>);

fn graph(m: &Molecule) -> UnGraph<Label, u8> {
    let mut g = UnGraph::new_undirected();
    let nodes: Vec<_> = m
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| g.add_node((a.element.atomic_number(), a.aromatic, a.formal_charge, m.hydrogens(i), a.isotope)))
        .collect();
    for b in m.bonds() {
        g.add_edge(nodes[b.a], nodes[b.b], b.order.code());
    }
    g
}

const HANDPICKED: &[&str] = &[
    "c1ccc2ccccc2c1",
    "C1CC2CCC1CC2",
    "OC(=O)[C@@H](N)Cc1c[nH]c2ccccc12",
    "[NH3+]CC(=O)[O-]",
    "C%10CCCCC%10",
    "[13CH3]C#N",
    "FC(F)(F)c1ccc(Cl)cc1Br",
    "CS(=O)(=O)N1CCN(CC1)c1ncccc1",
    "C1=CC=CC=C1",
    "[Se]1C=CC=C1",
    "OP(=O)(O)OCC",
    "[Si](C)(C)(C)C",
];

fn corpus() -> &'static [String] {
    static CORPUS: OnceLock<Vec<String>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let mut v: Vec<String> = HANDPICKED.iter().map(|s| s.to_string()).collect();
        v.extend(generate_smiles(150, 3));
        v
    })
}

#[test]
fn handpicked_molecules_round_trip() {
    for s in HANDPICKED {
        let m = parse_smiles(s).unwrap();
        let c = canonical_smiles(&m);
        let back = parse_smiles(&c).unwrap();
        assert!(is_isomorphic_matching(&graph(&m), &graph(&back), |a, b| a == b, |a, b| a == b), "{s} -> {c}");
        assert_eq!(canonical_smiles(&back), c, "{s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn enumeration_preserves_graph_and_canonical_form(pick in 0usize..162, seed in any::<u64>()) {
        let all = corpus();
        let s = &all[pick % all.len()];
        let m = parse_smiles(s).unwrap();
        let r = enumerate_smiles(&m, seed);
        let back = parse_smiles(&r).unwrap();
        prop_assert!(
            is_isomorphic_matching(&graph(&m), &graph(&back), |a, b| a == b, |a, b| a == b),
            "{} and {} differ as graphs", s, r
        );
        prop_assert_eq!(canonical_smiles(&back), canonical_smiles(&m));
    }

    #[test]
    fn distinct_canonical_strings_are_not_isomorphic(i in 0usize..162, j in 0usize..162) {
        let all = corpus();
        let (a, b) = (parse_smiles(&all[i % all.len()]).unwrap(), parse_smiles(&all[j % all.len()]).unwrap());
        let iso = is_isomorphic_matching(&graph(&a), &graph(&b), |x, y| x == y, |x, y| x == y);
        prop_assert_eq!(iso, canonical_smiles(&a) == canonical_smiles(&b));
    }
}
