use std::collections::BTreeMap;

use super::{Atom, Bond, BondOrder, Element, Molecule, SmilesError};

/// Symbols recognised inside brackets so that e.g. `[Sc]` reports scandium
/// instead of being misread as sulfur.
const PERIODIC: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K",
    "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb",
    "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs",
    "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta",
    "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr",
];

struct RingOpen {
    atom: usize,
    bond: Option<BondOrder>,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    branches: Vec<(usize, usize)>,
    pending_bond: Option<(BondOrder, usize)>,
    rings: BTreeMap<u32, RingOpen>,
}

/// Parses a single-component SMILES string.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut p = Parser {
        s: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        branches: Vec::new(),
        pending_bond: None,
        rings: BTreeMap::new(),
    };
    p.run()?;
    Molecule::from_parts(p.atoms, p.bonds)
}

impl Parser<'_> {
    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T, SmilesError> {
        Err(SmilesError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let Some(prev) = self.prev else {
                        return self.syntax("branch before any atom");
                    };
                    if self.pending_bond.is_some() {
                        return self.syntax("bond symbol before branch");
                    }
                    self.branches.push((prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    let Some((atom, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedBranch(self.pos));
                    };
                    if self.pending_bond.is_some() {
                        return self.syntax("dangling bond at branch end");
                    }
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'.' => return Err(SmilesError::MultiFragment(self.pos)),
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    let order = match c {
                        b'-' | b'/' | b'\\' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        _ => return self.syntax("quadruple bonds are not supported"),
                    };
                    if self.prev.is_none() {
                        return self.syntax("bond before any atom");
                    }
                    if self.pending_bond.is_some() {
                        return self.syntax("consecutive bond symbols");
                    }
                    self.pending_bond = Some((order, self.pos));
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    let n = (c - b'0') as u32;
                    self.pos += 1;
                    self.ring_bond(n)?;
                }
                b'%' => {
                    let d = self.s.get(self.pos + 1..self.pos + 3);
                    match d {
                        Some([a, b]) if a.is_ascii_digit() && b.is_ascii_digit() => {
                            let n = ((a - b'0') * 10 + (b - b'0')) as u32;
                            self.pos += 3;
                            self.ring_bond(n)?;
                        }
                        _ => return self.syntax("`%` must be followed by two digits"),
                    }
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom)?;
                }
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom)?;
                }
            }
        }
        if let Some(&(_, pos)) = self.branches.last() {
            return Err(SmilesError::UnbalancedBranch(pos));
        }
        if self.pending_bond.is_some() {
            return self.syntax("dangling bond at end of input");
        }
        if let Some((&n, _)) = self.rings.iter().next() {
            return Err(SmilesError::UnclosedRing(n));
        }
        Ok(())
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn check_aromatic_bond(&self, order: BondOrder, a: usize, b: usize) -> Result<(), SmilesError> {
        if order == BondOrder::Aromatic && !(self.atoms[a].aromatic && self.atoms[b].aromatic) {
            return self.syntax("aromatic bond between non-aromatic atoms");
        }
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            let order = match self.pending_bond.take() {
                Some((o, _)) => o,
                None => self.default_order(prev, idx),
            };
            self.check_aromatic_bond(order, prev, idx)?;
            self.bonds.push(Bond { a: prev, b: idx, order });
        } else if let Some((_, pos)) = self.pending_bond {
            return Err(SmilesError::Syntax {
                pos,
                msg: "bond before any atom".into(),
            });
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_bond(&mut self, n: u32) -> Result<(), SmilesError> {
        let Some(cur) = self.prev else {
            return self.syntax("ring bond before any atom");
        };
        let bond = self.pending_bond.take().map(|(o, _)| o);
        match self.rings.remove(&n) {
            None => {
                self.rings.insert(n, RingOpen { atom: cur, bond });
            }
            Some(open) => {
                if open.atom == cur {
                    return self.syntax("ring bond to itself");
                }
                let order = match (open.bond, bond) {
                    (Some(a), Some(b)) if a != b => return self.syntax("conflicting ring bond orders"),
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.default_order(open.atom, cur),
                };
                self.check_aromatic_bond(order, open.atom, cur)?;
                if self
                    .bonds
                    .iter()
                    .any(|b| (b.a == open.atom && b.b == cur) || (b.a == cur && b.b == open.atom))
                {
                    return self.syntax("ring bond duplicates an existing bond");
                }
                self.bonds.push(Bond {
                    a: open.atom,
                    b: cur,
                    order,
                });
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let c = self.s[self.pos];
        let next = self.s.get(self.pos + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            (b'*', _) => return Err(SmilesError::UnknownElement("*".into())),
            (c, _) if c.is_ascii_alphabetic() => {
                return Err(SmilesError::UnknownElement((c as char).to_string()));
            }
            _ => return self.syntax(format!("unexpected character `{}`", c as char)),
        };
        self.pos += len;
        let mut atom = Atom::new(element, self.atoms.len());
        atom.aromatic = aromatic;
        Ok(atom)
    }

    fn read_number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.s[start..self.pos]).ok()?.parse().ok()
        }
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        self.pos += 1;
        let isotope = self.read_number();

        // element symbol
        let (element, aromatic) = {
            let c = self.peek().ok_or(SmilesError::Syntax {
                pos: self.pos,
                msg: "unterminated bracket atom".into(),
            })?;
            if c.is_ascii_lowercase() {
                let two = self.s.get(self.pos..self.pos + 2);
                if matches!(two, Some(b"se") | Some(b"as") | Some(b"te")) {
                    let sym = std::str::from_utf8(two.unwrap()).unwrap();
                    self.pos += 2;
                    match sym {
                        "se" => (Element::Se, true),
                        other => return Err(SmilesError::UnknownElement(other.to_string())),
                    }
                } else {
                    self.pos += 1;
                    let e = match c {
                        b'b' => Element::B,
                        b'c' => Element::C,
                        b'n' => Element::N,
                        b'o' => Element::O,
                        b'p' => Element::P,
                        b's' => Element::S,
                        _ => return Err(SmilesError::UnknownElement((c as char).to_string())),
                    };
                    (e, true)
                }
            } else if c.is_ascii_uppercase() {
                let two = self
                    .s
                    .get(self.pos..self.pos + 2)
                    .filter(|t| t[1].is_ascii_lowercase())
                    .and_then(|t| std::str::from_utf8(t).ok())
                    .filter(|t| PERIODIC.contains(t));
                let sym = match two {
                    Some(t) => t.to_string(),
                    None => (c as char).to_string(),
                };
                self.pos += sym.len();
                match Element::from_symbol(&sym) {
                    Some(e) => (e, false),
                    None => return Err(SmilesError::UnknownElement(sym)),
                }
            } else if c == b'*' {
                return Err(SmilesError::UnknownElement("*".into()));
            } else {
                return self.syntax("expected element symbol");
            }
        };

        // chirality, discarded
        if self.peek() == Some(b'@') {
            self.pos += 1;
            if self.peek() == Some(b'@') {
                self.pos += 1;
            } else if let Some(b"TH" | b"AL" | b"SP" | b"TB" | b"OH") = self.s.get(self.pos..self.pos + 2) {
                self.pos += 2;
                self.read_number();
            }
        }

        let mut hcount = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            hcount = match self.read_number() {
                Some(n) if n <= 9 => n as u8,
                Some(_) => return self.syntax("hydrogen count out of range"),
                None => 1,
            };
        }

        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            if let Some(n) = self.read_number() {
                charge = unit * n as i32;
            } else {
                charge = unit;
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
            if !(-15..=15).contains(&charge) {
                return self.syntax("charge out of range");
            }
        }

        // atom class, discarded
        if self.peek() == Some(b':') {
            self.pos += 1;
            if self.read_number().is_none() {
                return self.syntax("atom class requires digits");
            }
        }

        if self.peek() != Some(b']') {
            return self.syntax("expected `]`");
        }
        self.pos += 1;

        if aromatic && !element.can_be_aromatic() {
            return Err(SmilesError::UnknownElement(element.symbol().to_lowercase()));
        }
        let mut atom = Atom::new(element, self.atoms.len());
        atom.aromatic = aromatic;
        atom.formal_charge = charge as i8;
        atom.explicit_h = Some(hcount);
        atom.isotope = match isotope {
            Some(0) | None => None,
            Some(v) if v <= u16::MAX as u32 => Some(v as u16),
            Some(_) => return self.syntax("isotope out of range"),
        };
        Ok(atom)
    }
}
