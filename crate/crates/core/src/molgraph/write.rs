//! SMILES emission by depth-first traversal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::canon::{break_tie, initial_ranks, lowest_tie, refine};
use super::{implicit_hydrogens, BondOrder, Molecule};

/// Upper bound on tie-breaking branches explored per molecule; beyond it
/// the first candidate of each tied class is taken.
const TIE_BRANCH_BUDGET: usize = 128;

/// Writes `m` starting at `start`, visiting neighbors in the order of
/// `order[atom]` (a permutation of the atom's neighbor list).
fn write_with_order(m: &Molecule, start: usize, order: &[Vec<usize>]) -> String {
    let n = m.num_atoms();
    let mut visit_idx = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    // (opener, closer, bond)
    let mut closures: Vec<(usize, usize, usize)> = Vec::new();
    let mut bond_used = vec![false; m.bonds().len()];

    // pass 1: spanning tree and ring closures
    let mut counter = 0;
    let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
    visit_idx[start] = counter;
    counter += 1;
    while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
        if *pos == order[u].len() {
            stack.pop();
            continue;
        }
        let v = order[u][*pos];
        *pos += 1;
        let bond = m.neighbors(u).iter().find(|&&(nb, _)| nb == v).unwrap().1;
        if bond_used[bond] {
            continue;
        }
        bond_used[bond] = true;
        if visit_idx[v] == usize::MAX {
            visit_idx[v] = counter;
            counter += 1;
            children[u].push(v);
            stack.push((v, 0));
        } else {
            closures.push((v, u, bond));
        }
    }

    // pass 2: emission
    let mut ring_of_atom: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); n];
    for (ci, &(opener, closer, _)) in closures.iter().enumerate() {
        ring_of_atom[opener].push((ci, closer, true));
        ring_of_atom[closer].push((ci, opener, false));
    }
    for list in ring_of_atom.iter_mut() {
        // closings first, then openings, each in partner visit order
        list.sort_by_key(|&(_, partner, opening)| (opening, visit_idx[partner]));
    }
    let mut digit_of = vec![0usize; closures.len()];
    let mut in_use: Vec<bool> = Vec::new();
    let mut out = String::new();
    let mut emit_stack: Vec<Emit> = vec![Emit::Atom(start, None)];
    while let Some(item) = emit_stack.pop() {
        match item {
            Emit::Text(t) => out.push_str(t),
            Emit::Atom(u, via) => {
                if let Some(bond) = via {
                    out.push_str(bond_symbol(m, bond));
                }
                write_atom(m, u, &mut out);
                let mut freed = Vec::new();
                for &(ci, _, opening) in &ring_of_atom[u] {
                    if opening {
                        let d = match in_use.iter().position(|&b| !b) {
                            Some(d) => d,
                            None => {
                                in_use.push(false);
                                in_use.len() - 1
                            }
                        };
                        in_use[d] = true;
                        digit_of[ci] = d;
                        out.push_str(bond_symbol(m, closures[ci].2));
                        push_ring_digit(&mut out, d + 1);
                    } else {
                        push_ring_digit(&mut out, digit_of[ci] + 1);
                        freed.push(digit_of[ci]);
                    }
                }
                for d in freed {
                    in_use[d] = false;
                }
                let kids = &children[u];
                // pushed in reverse so they pop in order
                for (k, &child) in kids.iter().enumerate().rev() {
                    let bond = m.neighbors(u).iter().find(|&&(nb, _)| nb == child).unwrap().1;
                    if k + 1 < kids.len() {
                        emit_stack.push(Emit::Text(")"));
                        emit_stack.push(Emit::Atom(child, Some(bond)));
                        emit_stack.push(Emit::Text("("));
                    } else {
                        emit_stack.push(Emit::Atom(child, Some(bond)));
                    }
                }
            }
        }
    }
    out
}

enum Emit {
    Atom(usize, Option<usize>),
    Text(&'static str),
}

fn push_ring_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push(char::from(b'0' + d as u8));
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}

fn bond_symbol(m: &Molecule, bond: usize) -> &'static str {
    let b = m.bonds()[bond];
    match b.order {
        BondOrder::Single => {
            if m.atoms()[b.a].aromatic && m.atoms()[b.b].aromatic {
                "-"
            } else {
                ""
            }
        }
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => "",
    }
}

fn write_atom(m: &Molecule, i: usize, out: &mut String) {
    let a = &m.atoms()[i];
    let h = m.hydrogens(i);
    let sym = a.element.symbol();
    let bare_ok = a.element.in_organic_subset()
        && a.formal_charge == 0
        && a.isotope.is_none()
        && implicit_hydrogens(
            a.element,
            a.aromatic,
            m.neighbors(i).iter().map(|&(_, b)| m.bonds()[b].order),
        ) == Some(h);
    let sym_cased = if a.aromatic { sym.to_lowercase() } else { sym.to_string() };
    if bare_ok {
        out.push_str(&sym_cased);
        return;
    }
    out.push('[');
    if let Some(iso) = a.isotope {
        out.push_str(&iso.to_string());
    }
    out.push_str(&sym_cased);
    if h > 0 {
        out.push('H');
        if h > 1 {
            out.push_str(&h.to_string());
        }
    }
    match a.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
}

fn write_ranked(m: &Molecule, ranks: &[usize]) -> String {
    let order: Vec<Vec<usize>> = (0..m.num_atoms())
        .map(|i| {
            let mut nb: Vec<usize> = m.neighbors(i).iter().map(|&(j, _)| j).collect();
            nb.sort_by_key(|&j| ranks[j]);
            nb
        })
        .collect();
    let start = (0..m.num_atoms()).min_by_key(|&i| ranks[i]).unwrap();
    write_with_order(m, start, &order)
}

fn search(m: &Molecule, ranks: Vec<usize>, budget: &mut usize, best: &mut Option<String>) {
    match lowest_tie(&ranks) {
        None => {
            let s = write_ranked(m, &ranks);
            if best.as_ref().is_none_or(|b| s < *b) {
                *best = Some(s);
            }
        }
        Some(tied) => {
            for (k, &atom) in tied.iter().enumerate() {
                if k > 0 {
                    if *budget == 0 {
                        break;
                    }
                    *budget -= 1;
                }
                search(m, refine(m, break_tie(&ranks, atom)), budget, best);
            }
        }
    }
}

/// Canonical SMILES: rank atoms by iterative refinement, explore the
/// tie-breaking alternatives and keep the lexicographically smallest string.
/// The start atom is the lowest-ranked atom and neighbors are visited in
/// ascending rank.
///
/// The result is deterministic and independent of input atom order, but it
/// is not byte-compatible with any other toolkit's canonical form.
pub fn canonical_smiles(m: &Molecule) -> String {
    let ranks = refine(m, initial_ranks(m));
    let mut budget = TIE_BRANCH_BUDGET;
    let mut best = None;
    search(m, ranks, &mut budget, &mut best);
    best.expect("at least one leaf")
}

/// Randomized SMILES: seeded-random start atom and neighbor order.
pub fn enumerate_smiles(m: &Molecule, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..m.num_atoms());
    let order: Vec<Vec<usize>> = (0..m.num_atoms())
        .map(|i| {
            let mut nb: Vec<usize> = m.neighbors(i).iter().map(|&(j, _)| j).collect();
            nb.shuffle(&mut rng);
            nb
        })
        .collect();
    write_with_order(m, start, &order)
}
