use ndarray::{s, Array2};

use super::{Vocabulary, CLS, CONTINUATION, NUM_SPECIALS, PAD, SEP, UNK};

/// Greedy longest-match-first segmentation of one SMILES into interior ids.
/// A position with no matching piece yields UNK and advances one character.
pub fn segment(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut piece = String::new();
    while start < chars.len() {
        let mut found = None;
        let mut end = chars.len();
        while end > start {
            piece.clear();
            if start > 0 {
                piece.push_str(CONTINUATION);
            }
            let lo = chars[start].0;
            let hi = chars.get(end).map_or(text.len(), |c| c.0);
            piece.push_str(&text[lo..hi]);
            if let Some(id) = vocab.id(&piece) {
                found = Some((id, end));
                break;
            }
            end -= 1;
        }
        match found {
            Some((id, end)) => {
                out.push(id);
                start = end;
            }
            None => {
                out.push(UNK);
                start += 1;
            }
        }
    }
    out
}

/// `[CLS] pieces [SEP] [PAD]...`, exactly `max_len` ids. Interior pieces are
/// truncated to `max_len - 2`. Returns the row and its unpadded length.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> (Vec<u32>, usize) {
    assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
    let mut pieces = segment(text, vocab);
    pieces.truncate(max_len - 2);
    let mut row = Vec::with_capacity(max_len);
    row.push(CLS);
    row.extend_from_slice(&pieces);
    row.push(SEP);
    let len = row.len();
    row.resize(max_len, PAD);
    (row, len)
}

/// Concatenates non-special pieces, dropping the `##` prefix.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for &id in ids {
        if id < NUM_SPECIALS {
            continue;
        }
        if let Some(t) = vocab.token(id) {
            out.push_str(t.strip_prefix(CONTINUATION).unwrap_or(t));
        }
    }
    out
}

/// Padded id matrix with its attention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedBatch {
    pub ids: Array2<u32>,
    pub attention_mask: Array2<u8>,
    pub lengths: Vec<usize>,
}

impl TokenizedBatch {
    pub fn batch_size(&self) -> usize {
        self.ids.nrows()
    }

    pub fn width(&self) -> usize {
        self.ids.ncols()
    }

    /// Drops trailing all-padding columns. Results are unchanged because
    /// padded keys are masked out of attention.
    pub fn trimmed(&self) -> TokenizedBatch {
        let w = self.lengths.iter().copied().max().unwrap_or(0).max(2).min(self.width());
        TokenizedBatch {
            ids: self.ids.slice(s![.., ..w]).to_owned(),
            attention_mask: self.attention_mask.slice(s![.., ..w]).to_owned(),
            lengths: self.lengths.clone(),
        }
    }

    /// Rows `rows` of this batch.
    pub fn select(&self, rows: &[usize]) -> TokenizedBatch {
        TokenizedBatch {
            ids: self.ids.select(ndarray::Axis(0), rows),
            attention_mask: self.attention_mask.select(ndarray::Axis(0), rows),
            lengths: rows.iter().map(|&r| self.lengths[r]).collect(),
        }
    }

    /// Number of UNK ids in row `r`.
    pub fn unk_count(&self, r: usize) -> usize {
        self.ids.row(r).iter().filter(|&&id| id == UNK).count()
    }
}

pub fn encode_batch<S: AsRef<str>>(texts: &[S], vocab: &Vocabulary, max_len: usize) -> TokenizedBatch {
    let mut ids = Array2::from_elem((texts.len(), max_len), PAD);
    let mut mask = Array2::zeros((texts.len(), max_len));
    let mut lengths = Vec::with_capacity(texts.len());
    for (r, t) in texts.iter().enumerate() {
        let (row, len) = encode(t.as_ref(), vocab, max_len);
        for (c, id) in row.into_iter().enumerate() {
            ids[[r, c]] = id;
        }
        mask.slice_mut(s![r, ..len]).fill(1);
        lengths.push(len);
    }
    TokenizedBatch {
        ids,
        attention_mask: mask,
        lengths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::train_wordpiece;

    fn vocab() -> Vocabulary {
        train_wordpiece(["CCO", "CCN", "c1ccccc1", "CC(=O)O", "CCCC", "c1ccncc1", "ClCBr", "C#N"], 60, 1).unwrap()
    }

    #[test]
    fn empty_string() {
        let v = vocab();
        let (row, len) = encode("", &v, 8);
        assert_eq!(row, vec![CLS, SEP, PAD, PAD, PAD, PAD, PAD, PAD]);
        assert_eq!(len, 2);
    }

    #[test]
    fn round_trip_and_no_unk() {
        let v = vocab();
        for s in ["CCO", "OCC", "c1cc(Br)ccc1Cl", "N#N", "C"] {
            let (row, _) = encode(s, &v, 64);
            assert_eq!(row[0], CLS);
            assert!(!row.contains(&UNK), "{s}");
            assert_eq!(decode(&row, &v), s);
        }
        let (row, _) = encode("CCXO", &v, 16);
        assert_eq!(row.iter().filter(|&&i| i == UNK).count(), 1);
        assert_eq!(decode(&row, &v), "CCO");
    }

    #[test]
    fn longest_match_first() {
        let v = Vocabulary::from_tokens(["C", "O", "##C", "##O", "CC", "##CO"].map(String::from));
        assert_eq!(segment("CCO", &v), vec![v.id("CC").unwrap(), v.id("##O").unwrap()]);
        assert_eq!(segment("OCO", &v), vec![v.id("O").unwrap(), v.id("##CO").unwrap()]);
        assert_eq!(segment("CC", &v), vec![v.id("CC").unwrap()]);
    }

    #[test]
    fn truncation() {
        let v = vocab();
        let (row, len) = encode(&"C".repeat(500), &v, 10);
        assert_eq!(len, 10);
        assert_eq!(row[9], SEP);
    }

    #[test]
    fn batch_layout() {
        let v = vocab();
        let b = encode_batch(&["CCO", "", "c1ccccc1"], &v, 32);
        assert_eq!(b.ids.dim(), (3, 32));
        for r in 0..3 {
            let ones = b.attention_mask.row(r).iter().filter(|&&m| m == 1).count();
            assert_eq!(ones, b.lengths[r]);
            assert_eq!(b.ids[[r, 0]], CLS);
            assert_eq!(b.ids[[r, b.lengths[r] - 1]], SEP);
            assert!(b.ids.row(r).iter().all(|&i| (i as usize) < v.len()));
        }
        let t = b.trimmed();
        assert_eq!(t.width(), *b.lengths.iter().max().unwrap());
    }
}
