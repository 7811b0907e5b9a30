use serde::{Deserialize, Serialize};

use crate::molgraph::{BondOrder, Element, Molecule};

/// Graph-derivable physicochemical descriptors.
///
/// | name | formula |
/// |------|---------|
/// | `mol_weight` | sum of standard atomic weights, implicit H included |
/// | `heavy_atoms` | atoms other than H |
/// | `count_c`, `count_n`, `count_o`, `count_s` | atoms of that element |
/// | `count_halogen` | F + Cl + Br + I |
/// | `bonds` | bonds between explicit atoms |
/// | `rings` | size of the smallest set of smallest rings |
/// | `aromatic_atoms` | atoms with the aromatic flag |
/// | `aromatic_rings` | SSSR rings whose atoms are all aromatic |
/// | `hbd` | N or O atoms bearing at least one H |
/// | `hba` | N and O atoms |
/// | `rotatable_bonds` | non-ring single bonds between heavy atoms that both have heavy degree >= 2 |
/// | `formal_charge` | sum of formal charges |
/// | `fraction_csp3` | carbons that are non-aromatic with only single bonds, over all carbons (0 without carbon) |
/// | `max_ring_size` | largest SSSR ring, 0 if acyclic |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Descriptor {
    MolWeight,
    HeavyAtoms,
    CountC,
    CountN,
    CountO,
    CountS,
    CountHalogen,
    Bonds,
    Rings,
    AromaticAtoms,
    AromaticRings,
    Hbd,
    Hba,
    RotatableBonds,
    FormalCharge,
    FractionCsp3,
    MaxRingSize,
}

impl Descriptor {
    pub const REFERENCE: [Descriptor; 17] = [
        Descriptor::MolWeight,
        Descriptor::HeavyAtoms,
        Descriptor::CountC,
        Descriptor::CountN,
        Descriptor::CountO,
        Descriptor::CountS,
        Descriptor::CountHalogen,
        Descriptor::Bonds,
        Descriptor::Rings,
        Descriptor::AromaticAtoms,
        Descriptor::AromaticRings,
        Descriptor::Hbd,
        Descriptor::Hba,
        Descriptor::RotatableBonds,
        Descriptor::FormalCharge,
        Descriptor::FractionCsp3,
        Descriptor::MaxRingSize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Descriptor::MolWeight => "mol_weight",
            Descriptor::HeavyAtoms => "heavy_atoms",
            Descriptor::CountC => "count_c",
            Descriptor::CountN => "count_n",
            Descriptor::CountO => "count_o",
            Descriptor::CountS => "count_s",
            Descriptor::CountHalogen => "count_halogen",
            Descriptor::Bonds => "bonds",
            Descriptor::Rings => "rings",
            Descriptor::AromaticAtoms => "aromatic_atoms",
            Descriptor::AromaticRings => "aromatic_rings",
            Descriptor::Hbd => "hbd",
            Descriptor::Hba => "hba",
            Descriptor::RotatableBonds => "rotatable_bonds",
            Descriptor::FormalCharge => "formal_charge",
            Descriptor::FractionCsp3 => "fraction_csp3",
            Descriptor::MaxRingSize => "max_ring_size",
        }
    }

    pub fn from_name(name: &str) -> Option<Descriptor> {
        Descriptor::REFERENCE.iter().copied().find(|d| d.name() == name)
    }

    pub fn compute(self, m: &Molecule) -> f64 {
        let count = |e: Element| m.atoms().iter().filter(|a| a.element == e).count() as f64;
        match self {
            Descriptor::MolWeight => {
                let heavy: f64 = m.atoms().iter().map(|a| a.element.atomic_weight()).sum();
                heavy + m.total_hydrogens() as f64 * Element::H.atomic_weight()
            }
            Descriptor::HeavyAtoms => m.heavy_atom_count() as f64,
            Descriptor::CountC => count(Element::C),
            Descriptor::CountN => count(Element::N),
            Descriptor::CountO => count(Element::O),
            Descriptor::CountS => count(Element::S),
            Descriptor::CountHalogen => m.atoms().iter().filter(|a| a.element.is_halogen()).count() as f64,
            Descriptor::Bonds => m.bonds().len() as f64,
            Descriptor::Rings => m.rings().len() as f64,
            Descriptor::AromaticAtoms => m.atoms().iter().filter(|a| a.aromatic).count() as f64,
            Descriptor::AromaticRings => m
                .rings()
                .iter()
                .filter(|r| r.iter().all(|&i| m.atoms()[i].aromatic))
                .count() as f64,
            Descriptor::Hbd => (0..m.num_atoms())
                .filter(|&i| matches!(m.atoms()[i].element, Element::N | Element::O) && m.hydrogens(i) > 0)
                .count() as f64,
            Descriptor::Hba => m
                .atoms()
                .iter()
                .filter(|a| matches!(a.element, Element::N | Element::O))
                .count() as f64,
            Descriptor::RotatableBonds => {
                let in_ring = m.ring_bonds();
                let heavy_degree = |i: usize| {
                    m.neighbors(i)
                        .iter()
                        .filter(|&&(j, _)| m.atoms()[j].element != Element::H)
                        .count()
                };
                m.bonds()
                    .iter()
                    .enumerate()
                    .filter(|&(bi, b)| {
                        b.order == BondOrder::Single
                            && !in_ring[bi]
                            && m.atoms()[b.a].element != Element::H
                            && m.atoms()[b.b].element != Element::H
                            && heavy_degree(b.a) >= 2
                            && heavy_degree(b.b) >= 2
                    })
                    .count() as f64
            }
            Descriptor::FormalCharge => m.atoms().iter().map(|a| a.formal_charge as f64).sum(),
            Descriptor::FractionCsp3 => {
                let carbons: Vec<usize> = (0..m.num_atoms()).filter(|&i| m.atoms()[i].element == Element::C).collect();
                if carbons.is_empty() {
                    return 0.0;
                }
                let sp3 = carbons
                    .iter()
                    .filter(|&&i| {
                        !m.atoms()[i].aromatic
                            && m.neighbors(i).iter().all(|&(_, b)| m.bonds()[b].order == BondOrder::Single)
                    })
                    .count();
                sp3 as f64 / carbons.len() as f64
            }
            Descriptor::MaxRingSize => m.rings().iter().map(|r| r.len()).max().unwrap_or(0) as f64,
        }
    }
}

/// An ordered descriptor selection; its length is the dimension D.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorSet(pub Vec<Descriptor>);

impl Default for DescriptorSet {
    fn default() -> Self {
        DescriptorSet(Descriptor::REFERENCE.to_vec())
    }
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|d| d.name().to_string()).collect()
    }

    /// Errors with the first unknown name.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<DescriptorSet, String> {
        names
            .iter()
            .map(|n| Descriptor::from_name(n.as_ref()).ok_or_else(|| n.as_ref().to_string()))
            .collect::<Result<Vec<_>, _>>()
            .map(DescriptorSet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

pub fn compute_descriptors(m: &Molecule) -> DescriptorVector {
    compute_descriptor_set(m, &DescriptorSet::default())
}

pub fn compute_descriptor_set(m: &Molecule, set: &DescriptorSet) -> DescriptorVector {
    DescriptorVector {
        names: set.names(),
        values: set.0.iter().map(|d| d.compute(m)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn get(s: &str, d: Descriptor) -> f64 {
        d.compute(&parse_smiles(s).unwrap())
    }

    #[test]
    fn ethanol() {
        // 2 * 12.011 + 6 * 1.008 + 15.999
        assert!((get("CCO", Descriptor::MolWeight) - 46.069).abs() < 1e-9);
        assert_eq!(get("CCO", Descriptor::HeavyAtoms), 3.0);
        assert_eq!(get("CCO", Descriptor::Hbd), 1.0);
        assert_eq!(get("CCO", Descriptor::Hba), 1.0);
        assert_eq!(get("CCO", Descriptor::RotatableBonds), 0.0);
        assert_eq!(get("CCO", Descriptor::FractionCsp3), 1.0);
    }

    #[test]
    fn benzene() {
        assert_eq!(get("c1ccccc1", Descriptor::AromaticAtoms), 6.0);
        assert_eq!(get("c1ccccc1", Descriptor::Rings), 1.0);
        assert_eq!(get("c1ccccc1", Descriptor::AromaticRings), 1.0);
        assert_eq!(get("c1ccccc1", Descriptor::RotatableBonds), 0.0);
        assert_eq!(get("c1ccccc1", Descriptor::MaxRingSize), 6.0);
        assert_eq!(get("c1ccccc1", Descriptor::FractionCsp3), 0.0);
    }

    #[test]
    fn mixed_molecule() {
        // butylbenzene: rotatable bonds ring-C1, C1-C2, C2-C3
        assert_eq!(get("CCCCc1ccccc1", Descriptor::RotatableBonds), 3.0);
        assert_eq!(get("OC(=O)CCl", Descriptor::CountHalogen), 1.0);
        assert_eq!(get("C[N+](=O)[O-]", Descriptor::FormalCharge), 0.0);
        assert_eq!(get("C[NH3+]", Descriptor::FormalCharge), 1.0);
        assert_eq!(get("C[NH3+]", Descriptor::Hbd), 1.0);
        assert_eq!(get("C1CCCCCCC1", Descriptor::MaxRingSize), 8.0);
        assert_eq!(get("C1CC1c1ccccc1", Descriptor::AromaticRings), 1.0);
        assert_eq!(get("C1CC1c1ccccc1", Descriptor::Rings), 2.0);
        assert!((get("CC=CC", Descriptor::FractionCsp3) - 0.5).abs() < 1e-12);
        assert_eq!(compute_descriptors(&parse_smiles("CCO").unwrap()).values.len(), 17);
    }
}
