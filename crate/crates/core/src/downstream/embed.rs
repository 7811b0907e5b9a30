use ndarray::Array2;

use super::DownstreamError;
use crate::encoder::{forward, pool, Checkpoint, Mode, Pooling};
use crate::tokenizer::encode_batch;

/// Eval-mode pooled embeddings, one molecule per forward pass so that a
/// row never depends on its neighbours.
pub fn embed_dataset<S: AsRef<str>>(
    ck: &Checkpoint,
    smiles: &[S],
    pooling: Pooling,
) -> Result<Array2<f64>, DownstreamError> {
    let cfg = &ck.config;
    let mut out = Array2::zeros((smiles.len(), cfg.hidden_dim));
    for (row, s) in smiles.iter().enumerate() {
        let batch = encode_batch(std::slice::from_ref(s), &ck.vocab, cfg.max_len).trimmed();
        if batch.unk_count(0) > 0 {
            return Err(DownstreamError::TokenizationFailure {
                row,
                smiles: s.as_ref().to_string(),
            });
        }
        let fwd = forward(cfg, &ck.params.encoder, &batch, Mode::Eval)?;
        let e = pool(&fwd, pooling);
        out.row_mut(row).assign(&e.row(0).mapv(f64::from));
    }
    Ok(out)
}
