//! Molecular graphs parsed from SMILES.
//!
//! The grammar covers the organic subset, bracket atoms (isotope, charge,
//! explicit hydrogens), the four bond orders, branches and ring closures
//! (including `%nn`). Stereo markers are accepted and discarded. Aromatic
//! flags are taken verbatim from lowercase input; there is no aromaticity
//! perception or kekulization.
//!
//! # Valence table
//!
//! | element | allowed valences |
//! |---------|------------------|
//! | H       | 1                |
//! | B       | 3                |
//! | C, Si   | 4                |
//! | N       | 3                |
//! | O, Se   | 2                |
//! | P       | 3, 5             |
//! | S       | 2, 4, 6          |
//! | F, Cl, Br, I | 1           |
//!
//! For an unbracketed atom the used valence is the sum of its bond orders,
//! with each aromatic bond counting 1. An aromatic atom additionally
//! contributes 1 for its ring pi bond when that still fits the lowest
//! allowed valence. The implicit hydrogen count is the smallest allowed
//! valence that is at least the used valence, minus the used valence.
//! Bracket atoms carry their hydrogen count explicitly and are checked
//! against `max valence + |charge|`.

mod canon;
mod corpus;
mod parse;
mod rings;
mod write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canon::canonical_ranks;
pub use corpus::{ingest_corpus, CorpusIngest, Rejected, MAX_HEAVY_ATOMS, MIN_HEAVY_ATOMS};
pub use parse::parse_smiles;
pub use write::{canonical_smiles, enumerate_smiles};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("unbalanced branch at position {0}")]
    UnbalancedBranch(usize),
    #[error("unclosed ring bond {0}")]
    UnclosedRing(u32),
    #[error("unknown or unsupported element `{0}`")]
    UnknownElement(String),
    #[error("valence violation on atom {atom} ({element})")]
    ValenceViolation { atom: usize, element: &'static str },
    #[error("multi-fragment SMILES (`.` at position {0})")]
    MultiFragment(usize),
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
}

/// Elements accepted in corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    Si,
    P,
    S,
    Cl,
    Se,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 13] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::Si,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Se,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::Si => "Si",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Se => "Se",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Si => 14,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Se => 34,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Standard atomic weight (IUPAC conventional values, g/mol).
    pub fn atomic_weight(self) -> f64 {
        match self {
            Element::H => 1.008,
            Element::B => 10.81,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::F => 18.998,
            Element::Si => 28.085,
            Element::P => 30.974,
            Element::S => 32.06,
            Element::Cl => 35.45,
            Element::Se => 78.971,
            Element::Br => 79.904,
            Element::I => 126.904,
        }
    }

    /// Allowed valences in increasing order.
    pub fn valences(self) -> &'static [u8] {
        match self {
            Element::H => &[1],
            Element::B => &[3],
            Element::C | Element::Si => &[4],
            Element::N => &[3],
            Element::O | Element::Se => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
        }
    }

    /// Writable without brackets.
    pub fn in_organic_subset(self) -> bool {
        !matches!(self, Element::H | Element::Si | Element::Se)
    }

    /// Has a lowercase (aromatic) spelling.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S | Element::Se
        )
    }

    pub fn is_halogen(self) -> bool {
        matches!(self, Element::F | Element::Cl | Element::Br | Element::I)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the used valence of each endpoint.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    /// Set iff the atom was written as a bracket expression.
    pub explicit_h: Option<u8>,
    pub isotope: Option<u16>,
    pub index: usize,
}

impl Atom {
    pub fn new(element: Element, index: usize) -> Self {
        Atom {
            element,
            aromatic: false,
            formal_charge: 0,
            explicit_h: None,
            isotope: None,
            index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// A validated, connected molecular graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Total hydrogen count per atom (explicit or implicit).
    hydrogens: Vec<u8>,
    /// Per atom: (neighbor, bond index), in bond insertion order.
    adjacency: Vec<Vec<(usize, usize)>>,
    rings: Vec<Vec<usize>>,
}

impl Molecule {
    /// Builds a molecule from atoms and bonds, assigning hydrogens from the
    /// valence table and perceiving the smallest set of smallest rings.
    pub fn from_parts(mut atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Molecule, SmilesError> {
        if atoms.is_empty() {
            return Err(SmilesError::Empty);
        }
        for (i, atom) in atoms.iter_mut().enumerate() {
            atom.index = i;
        }
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        for (bi, bond) in bonds.iter().enumerate() {
            if bond.a == bond.b || bond.a >= n || bond.b >= n {
                return Err(SmilesError::Syntax {
                    pos: 0,
                    msg: format!("invalid bond {}-{}", bond.a, bond.b),
                });
            }
            if bond.order == BondOrder::Aromatic && !(atoms[bond.a].aromatic && atoms[bond.b].aromatic) {
                return Err(SmilesError::Syntax {
                    pos: 0,
                    msg: format!("aromatic bond {}-{} between non-aromatic atoms", bond.a, bond.b),
                });
            }
            if adjacency[bond.a].iter().any(|&(nb, _)| nb == bond.b) {
                return Err(SmilesError::Syntax {
                    pos: 0,
                    msg: format!("duplicate bond {}-{}", bond.a, bond.b),
                });
            }
            adjacency[bond.a].push((bond.b, bi));
            adjacency[bond.b].push((bond.a, bi));
        }

        let mut hydrogens = Vec::with_capacity(n);
        for (i, atom) in atoms.iter().enumerate() {
            let orders = adjacency[i].iter().map(|&(_, b)| bonds[b].order);
            let h = assign_hydrogens(atom, orders).ok_or(SmilesError::ValenceViolation {
                atom: i,
                element: atom.element.symbol(),
            })?;
            hydrogens.push(h);
        }

        let rings = rings::sssr(n, &bonds, &adjacency);
        Ok(Molecule {
            atoms,
            bonds,
            hydrogens,
            adjacency,
            rings,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    /// SSSR rings; each ring starts at its lowest atom index and continues
    /// towards the lower-indexed of that atom's two ring neighbors.
    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn hydrogens(&self, atom: usize) -> u8 {
        self.hydrogens[atom]
    }

    pub fn total_hydrogens(&self) -> usize {
        self.hydrogens.iter().map(|&h| h as usize).sum()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }

    /// (neighbor, bond index) pairs.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Bond indices that lie on at least one ring.
    pub fn ring_bonds(&self) -> Vec<bool> {
        let mut in_ring = vec![false; self.bonds.len()];
        for ring in &self.rings {
            for k in 0..ring.len() {
                let (u, v) = (ring[k], ring[(k + 1) % ring.len()]);
                if let Some(&(_, bi)) = self.adjacency[u].iter().find(|&&(nb, _)| nb == v) {
                    in_ring[bi] = true;
                }
            }
        }
        in_ring
    }

    pub fn ring_atoms(&self) -> Vec<bool> {
        let mut in_ring = vec![false; self.atoms.len()];
        for ring in &self.rings {
            for &a in ring {
                in_ring[a] = true;
            }
        }
        in_ring
    }
}

/// Implicit hydrogens for an unbracketed atom, `None` if no allowed valence
/// accommodates its bonds.
pub fn implicit_hydrogens(element: Element, aromatic: bool, orders: impl Iterator<Item = BondOrder>) -> Option<u8> {
    let used: u8 = orders.fold(0u8, |acc, o| acc.saturating_add(o.valence()));
    let valences = element.valences();
    let used = if aromatic && used < valences[0] { used + 1 } else { used };
    valences.iter().find(|&&v| v >= used).map(|&v| v - used)
}

fn assign_hydrogens(atom: &Atom, orders: impl Iterator<Item = BondOrder>) -> Option<u8> {
    match atom.explicit_h {
        None => implicit_hydrogens(atom.element, atom.aromatic, orders),
        Some(h) => {
            let used: u32 = orders.map(|o| o.valence() as u32).sum::<u32>() + h as u32;
            let max = *atom.element.valences().last().unwrap() as u32 + atom.formal_charge.unsigned_abs() as u32;
            (used <= max).then_some(h)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aromatic_pi_contribution_respects_lowest_valence() {
        use BondOrder::*;
        // benzene carbon
        assert_eq!(implicit_hydrogens(Element::C, true, [Aromatic, Aromatic].into_iter()), Some(1));
        // pyridine nitrogen
        assert_eq!(implicit_hydrogens(Element::N, true, [Aromatic, Aromatic].into_iter()), Some(0));
        // furan oxygen, thiophene sulfur
        assert_eq!(implicit_hydrogens(Element::O, true, [Aromatic, Aromatic].into_iter()), Some(0));
        assert_eq!(implicit_hydrogens(Element::S, true, [Aromatic, Aromatic].into_iter()), Some(0));
        // ring-fusion carbon
        assert_eq!(
            implicit_hydrogens(Element::C, true, [Aromatic, Aromatic, Aromatic].into_iter()),
            Some(0)
        );
    }

    #[test]
    fn hypervalent_sulfur_and_phosphorus_pick_smallest_fit() {
        use BondOrder::*;
        assert_eq!(implicit_hydrogens(Element::S, false, [Double, Double, Single].into_iter()), Some(1));
        assert_eq!(
            implicit_hydrogens(Element::S, false, [Double, Double, Single, Single].into_iter()),
            Some(0)
        );
        assert_eq!(implicit_hydrogens(Element::P, false, [Double, Single].into_iter()), Some(0));
        assert_eq!(implicit_hydrogens(Element::P, false, [Double, Single, Single].into_iter()), Some(1));
        assert_eq!(implicit_hydrogens(Element::C, false, [Double, Double, Single].into_iter()), None);
    }
}
