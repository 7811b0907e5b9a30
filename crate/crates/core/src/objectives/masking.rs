use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::tokenizer::{TokenizedBatch, MASK, NUM_SPECIALS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    /// Fraction of non-special tokens selected per sequence.
    pub rate: f64,
    /// Of the selected: share replaced by `[MASK]`.
    pub mask_share: f64,
    /// Of the selected: share replaced by a random non-special token. The
    /// remainder keeps its id.
    pub random_share: f64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            rate: 0.15,
            mask_share: 0.8,
            random_share: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    /// Ids after corruption.
    pub input: TokenizedBatch,
    pub original: Array2<u32>,
    /// 1 where the position was selected for prediction.
    pub selected: Array2<u8>,
}

impl MaskedBatch {
    pub fn num_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s == 1).count()
    }
}

/// Selects `max(1, round(rate * n))` of the `n` non-special tokens of every
/// sequence (none if `n == 0`) and corrupts them by the 80/10/10 rule.
pub fn apply_masking(batch: &TokenizedBatch, vocab_size: usize, cfg: &MaskingConfig, seed: u64) -> MaskedBatch {
    let mut input = batch.clone();
    let mut selected = Array2::zeros(batch.ids.raw_dim());
    for r in 0..batch.batch_size() {
        let mut rng = seed::rng(seed, "mask", r as u64);
        let candidates: Vec<usize> = (0..batch.width())
            .filter(|&c| batch.attention_mask[[r, c]] == 1 && batch.ids[[r, c]] >= NUM_SPECIALS)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let n = candidates.len();
        let count = ((cfg.rate * n as f64 + 0.5 + 1e-9).floor() as usize).clamp(1, n);
        let mut picked: Vec<usize> = sample(&mut rng, n, count).into_iter().map(|k| candidates[k]).collect();
        picked.sort_unstable();
        for c in picked {
            selected[[r, c]] = 1;
            let u: f64 = rng.random();
            if u < cfg.mask_share {
                input.ids[[r, c]] = MASK;
            } else if u < cfg.mask_share + cfg.random_share {
                input.ids[[r, c]] = rng.random_range(NUM_SPECIALS..vocab_size as u32);
            }
        }
    }
    MaskedBatch {
        input,
        original: batch.ids.clone(),
        selected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{CLS, PAD, SEP};
    use rand::SeedableRng;

    fn random_batch(rows: usize, seed: u64) -> TokenizedBatch {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let width = 64;
        let mut ids = Array2::from_elem((rows, width), PAD);
        let mut mask = Array2::zeros((rows, width));
        let mut lengths = Vec::new();
        for r in 0..rows {
            let n: usize = rng.random_range(5..=60);
            ids[[r, 0]] = CLS;
            for c in 1..=n {
                ids[[r, c]] = rng.random_range(NUM_SPECIALS..100);
            }
            ids[[r, n + 1]] = SEP;
            for c in 0..n + 2 {
                mask[[r, c]] = 1;
            }
            lengths.push(n + 2);
        }
        TokenizedBatch {
            ids,
            attention_mask: mask,
            lengths,
        }
    }

    #[test]
    fn aggregate_rate_and_specials() {
        let b = random_batch(10_000, 1);
        let m = apply_masking(&b, 100, &MaskingConfig::default(), 7);
        let content: usize = b.lengths.iter().map(|l| l - 2).sum();
        let frac = m.num_selected() as f64 / content as f64;
        assert!((frac - 0.15).abs() <= 0.01, "{frac}");
        for ((&s, &id), &mk) in m.selected.iter().zip(&b.ids).zip(&b.attention_mask) {
            if s == 1 {
                assert!(id >= NUM_SPECIALS && mk == 1);
            }
        }
        let mut kinds = [0usize; 3];
        for ((&s, &a), &o) in m.selected.iter().zip(&m.input.ids).zip(&m.original) {
            if s == 1 {
                kinds[if a == MASK { 0 } else if a == o { 2 } else { 1 }] += 1;
            }
        }
        let total = m.num_selected() as f64;
        assert!((kinds[0] as f64 / total - 0.8).abs() < 0.01);
        // random replacements occasionally hit the original id
        assert!((kinds[1] as f64 / total - 0.1).abs() < 0.01);
    }

    #[test]
    fn per_sequence_count_and_determinism() {
        let b = random_batch(50, 2);
        let m = apply_masking(&b, 100, &MaskingConfig::default(), 3);
        for r in 0..50 {
            let n = b.lengths[r] - 2;
            let expect = ((0.15 * n as f64 + 0.5).floor() as usize).max(1);
            assert_eq!(m.selected.row(r).iter().filter(|&&s| s == 1).count(), expect);
        }
        assert_eq!(m, apply_masking(&b, 100, &MaskingConfig::default(), 3));
        assert_ne!(m.selected, apply_masking(&b, 100, &MaskingConfig::default(), 4).selected);
    }
}
