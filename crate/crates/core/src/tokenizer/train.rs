use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{TokenizerError, Vocabulary, CONTINUATION, SPECIAL_TOKENS};

/// WordPiece induction.
///
/// Starts from the character alphabet (every character both as a
/// word-initial token and in its `##`-prefixed form) and repeatedly merges the adjacent pair maximizing
/// `freq(pair) / (freq(left) * freq(right))` among pairs with
/// `freq(pair) >= min_frequency`, until `vocab_size` tokens exist or no pair
/// qualifies. Ties go to the lexicographically smallest `(left, right)`.
pub fn train_wordpiece<I, S>(corpus: I, vocab_size: usize, min_frequency: u64) -> Result<Vocabulary, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        let w = line.as_ref().trim();
        if !w.is_empty() {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut initial: BTreeSet<String> = BTreeSet::new();
    let mut continuation: BTreeSet<String> = BTreeSet::new();
    let mut words: Vec<(Vec<String>, u64)> = Vec::with_capacity(word_counts.len());
    for (w, &count) in &word_counts {
        let mut symbols = Vec::with_capacity(w.len());
        for (k, ch) in w.chars().enumerate() {
            // both forms of every character, so any in-alphabet string
            // segments without UNK
            initial.insert(ch.to_string());
            continuation.insert(format!("{CONTINUATION}{ch}"));
            if k == 0 {
                symbols.push(ch.to_string());
            } else {
                symbols.push(format!("{CONTINUATION}{ch}"));
            }
        }
        words.push((symbols, count));
    }

    let base = SPECIAL_TOKENS.len() + initial.len() + continuation.len();
    if vocab_size < base {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            base,
        });
    }
    let mut tokens: Vec<String> = initial.into_iter().chain(continuation).collect();
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();

    while SPECIAL_TOKENS.len() + tokens.len() < vocab_size {
        let mut symbol_freq: HashMap<&str, u64> = HashMap::new();
        let mut pair_freq: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, count) in &words {
            for s in symbols {
                *symbol_freq.entry(s.as_str()).or_default() += count;
            }
            for pair in symbols.windows(2) {
                *pair_freq.entry((pair[0].as_str(), pair[1].as_str())).or_default() += count;
            }
        }
        // exact rational comparison of f/(l*r)
        let mut best: Option<((&str, &str), u64, u128)> = None;
        for (&pair, &f) in &pair_freq {
            if f < min_frequency.max(1) {
                continue;
            }
            let denom = symbol_freq[pair.0] as u128 * symbol_freq[pair.1] as u128;
            let better = match best {
                None => true,
                Some((bp, bf, bd)) => {
                    let lhs = f as u128 * bd;
                    let rhs = bf as u128 * denom;
                    lhs > rhs || (lhs == rhs && pair < bp)
                }
            };
            if better {
                best = Some((pair, f, denom));
            }
        }
        let Some(((left, right), _, _)) = best else {
            break;
        };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{}", right.strip_prefix(CONTINUATION).unwrap_or(&right));
        for (symbols, _) in words.iter_mut() {
            if symbols.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            *symbols = out;
        }
        if known.insert(merged.clone()) {
            tokens.push(merged);
        }
    }
    Ok(Vocabulary::from_tokens(tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_only() {
        let v = train_wordpiece(["CCO"], 9, 1).unwrap();
        assert_eq!(v.tokens(), &["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "C", "O", "##C", "##O"]);
    }

    #[test]
    fn too_small_and_empty() {
        assert!(matches!(
            train_wordpiece(["CCO"], 8, 1),
            Err(TokenizerError::VocabTooSmall { base: 9, .. })
        ));
        assert!(matches!(
            train_wordpiece(Vec::<String>::new(), 100, 1),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn merges_respect_limit_and_are_deterministic() {
        let corpus = ["CCO", "CCN", "c1ccccc1", "CC(=O)O", "CCCC", "c1ccncc1"];
        let a = train_wordpiece(corpus, 40, 1).unwrap();
        let b = train_wordpiece(corpus, 40, 1).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert!(a.len() <= 40);
        let big = train_wordpiece(corpus, 10_000, 1).unwrap();
        assert!(big.len() < 10_000);
        assert!(big.len() > a.len() || a.len() == 40);
    }

    #[test]
    fn min_frequency_stops_merging() {
        let v = train_wordpiece(["CN", "OS"], 100, 2).unwrap();
        // no pair occurs twice
        assert_eq!(v.len(), 5 + 4 + 4);
    }

    #[test]
    fn first_merge_uses_score_not_frequency() {
        // "##c##c" pairs are frequent, but "C"+"##l" is exclusive to each other
        let v = train_wordpiece(["Cl", "ccc", "ccc"], 5 + 3 + 3 + 1, 1).unwrap();
        assert_eq!(v.tokens().last().unwrap(), "Cl");
    }
}
