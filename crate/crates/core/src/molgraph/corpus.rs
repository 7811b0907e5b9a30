use serde::{Deserialize, Serialize};

use super::parse_smiles;

pub const MIN_HEAVY_ATOMS: usize = 5;
pub const MAX_HEAVY_ATOMS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    /// 1-based line number.
    pub line: usize,
    pub smiles: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusIngest {
    pub accepted: Vec<String>,
    pub rejected: Vec<Rejected>,
}

/// Reads a one-SMILES-per-line corpus. Blank lines are skipped; lines that
/// fail to parse or fall outside 5–100 heavy atoms are rejected with a
/// reason. Accepted strings are kept as written.
pub fn ingest_corpus(text: &str) -> CorpusIngest {
    let mut out = CorpusIngest::default();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let reason = match parse_smiles(s) {
            Err(e) => Some(e.to_string()),
            Ok(m) => {
                let n = m.heavy_atom_count();
                (!(MIN_HEAVY_ATOMS..=MAX_HEAVY_ATOMS).contains(&n))
                    .then(|| format!("{n} heavy atoms, outside {MIN_HEAVY_ATOMS}–{MAX_HEAVY_ATOMS}"))
            }
        };
        match reason {
            None => out.accepted.push(s.to_string()),
            Some(reason) => out.rejected.push(Rejected {
                line: i + 1,
                smiles: s.to_string(),
                reason,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_and_parse_filters() {
        let big = "C".repeat(101);
        let text = format!("CCO\nc1ccccc1\n\nC(C(C\n{big}\nCCCCC\n");
        let r = ingest_corpus(&text);
        assert_eq!(r.accepted, vec!["c1ccccc1", "CCCCC"]);
        let lines: Vec<usize> = r.rejected.iter().map(|x| x.line).collect();
        assert_eq!(lines, vec![1, 4, 5]);
        assert!(r.rejected[0].reason.contains("3 heavy atoms"));
    }
}
