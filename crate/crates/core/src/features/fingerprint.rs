//! Morgan (ECFP-style) fingerprints.
//!
//! Atom identifiers start from a hash of (atomic number, degree, formal
//! charge, hydrogen count, aromatic flag, ring flag). Each of `radius`
//! rounds replaces an atom's identifier by the hash of its previous
//! identifier and the sorted list of (bond order code, neighbor identifier)
//! pairs. Every identifier of every round sets bit `id % nbits`.
//!
//! The mixing function is splitmix64 with the pinned seed `FP_SEED`, so bit
//! positions are identical on every platform.

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::molgraph::Molecule;

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_NBITS: usize = 2048;

const FP_SEED: u64 = 0x6d6f_6c64_6170_7431;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_seq(values: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = splitmix(FP_SEED);
    for v in values {
        h = splitmix(h ^ v);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub nbits: usize,
    pub radius: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: usize) -> Self {
        Fingerprint {
            nbits,
            radius,
            words: vec![0; nbits.div_ceil(64)],
        }
    }

    pub fn from_bits(nbits: usize, bits: &[usize]) -> Self {
        let mut fp = Fingerprint::empty(nbits, 0);
        for &b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.get(b))
    }

    /// Bits as 0/1 features.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.nbits).map(|b| if self.get(b) { 1.0 } else { 0.0 }).collect()
    }
}

pub fn morgan_fingerprint(m: &Molecule, radius: usize, nbits: usize) -> Fingerprint {
    assert!(nbits > 0, "fingerprint width must be positive");
    let mut fp = Fingerprint::empty(nbits, radius);
    let ring = m.ring_atoms();
    let mut ids: Vec<u64> = (0..m.num_atoms())
        .map(|i| {
            let a = &m.atoms()[i];
            hash_seq([
                a.element.atomic_number() as u64,
                m.degree(i) as u64,
                a.formal_charge as i64 as u64,
                m.hydrogens(i) as u64,
                a.aromatic as u64,
                ring[i] as u64,
            ])
        })
        .collect();
    for &id in &ids {
        fp.set((id % nbits as u64) as usize);
    }
    for round in 0..radius {
        let next: Vec<u64> = (0..m.num_atoms())
            .map(|i| {
                let mut env: Vec<(u64, u64)> = m
                    .neighbors(i)
                    .iter()
                    .map(|&(j, b)| (m.bonds()[b].order.code() as u64, ids[j]))
                    .collect();
                env.sort_unstable();
                hash_seq(
                    [round as u64 + 1, ids[i]]
                        .into_iter()
                        .chain(env.into_iter().flat_map(|(o, id)| [o, id])),
                )
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % nbits as u64) as usize);
        }
    }
    fp
}

/// |a and b| / |a or b|, 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FeatureError> {
    if a.nbits != b.nbits {
        return Err(FeatureError::WidthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
