//! WordPiece vocabulary induction and encoding for SMILES.
//!
//! Each SMILES string is one word; there is no whitespace pre-splitting.
//! Non-initial pieces carry the `##` continuation prefix.

mod encode;
mod train;

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use encode::{decode, encode, encode_batch, segment, TokenizedBatch};
pub use train::train_wordpiece;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: u32 = 5;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const CONTINUATION: &str = "##";

pub const DEFAULT_MAX_LEN: usize = 128;
pub const DESK_VOCAB_SIZE: usize = 512;
pub const PAPER_VOCAB_SIZE: usize = 4096;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("vocabulary size {requested} is smaller than the base alphabet ({base} tokens incl. specials)")]
    VocabTooSmall { requested: usize, base: usize },
    #[error("invalid vocabulary file: {0}")]
    InvalidVocab(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from non-special tokens, prepending the specials.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocabulary {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for t in tokens {
            if !all.contains(&t) {
                all.push(t);
            }
        }
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    /// `vocab.txt` contents: one token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Vocabulary, TokenizerError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(TokenizerError::InvalidVocab("missing special tokens in lines 0-4".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || index.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("empty or duplicate token on line {i}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, TokenizerError> {
        Vocabulary::from_text(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the `vocab.txt` representation.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::from_tokens(["C".to_string(), "##C".to_string()]);
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("[MASK]"), Some(MASK));
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert!(Vocabulary::from_text("C\n##C\n").is_err());
    }
}
