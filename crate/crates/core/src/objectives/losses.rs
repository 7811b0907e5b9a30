use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MaskedBatch, ObjectiveError, TripleBatch};
use crate::encoder::{backward, forward, pool, pool_backward, EncoderConfig, Forward, Mode, Params, Pooling, Real};
use crate::seed;
use crate::tokenizer::TokenizedBatch;

/// Loss value and, when requested, gradients for every parameter.
pub struct Step<F> {
    pub loss: f64,
    pub grads: Option<Params<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClVariant {
    /// Multiple negatives ranking loss: positive inside the log-sum-exp,
    /// minimized.
    Standard,
    /// `mean_i [ sim(c_i, e_i) - log sum_j exp(sim(c_i, n_j)) ]` exactly as
    /// written in the source formula.
    PaperLiteral,
}

/// Gradient of a loss evaluated on a fixed encoder output: with respect to
/// the hidden states, and for the head parameters (encoder part zero).
pub struct HeadGrad<F> {
    pub d_hidden: Array2<F>,
    pub grads: Params<F>,
}

fn finish<F: Real>(
    cfg: &EncoderConfig,
    params: &Params<F>,
    fwd: &Forward<F>,
    loss: f64,
    g: Option<HeadGrad<F>>,
) -> Step<F> {
    let grads = g.map(|g| {
        let mut grads = g.grads;
        backward(cfg, &params.encoder, fwd, &g.d_hidden, &mut grads.encoder);
        grads
    });
    Step { loss, grads }
}

fn softmax_row<F: Real>(row: &mut ndarray::ArrayViewMut1<F>) {
    let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
    row.mapv_inplace(|v| (v - m).exp());
    let z = row.sum();
    *row /= z;
}

fn selected_rows(b: &MaskedBatch) -> Vec<(usize, u32)> {
    let t = b.selected.ncols();
    b.selected
        .indexed_iter()
        .filter(|(_, &s)| s == 1)
        .map(|((r, c), _)| (r * t + c, b.original[[r, c]]))
        .collect()
}

/// Mean cross-entropy of the original ids at the selected positions.
pub fn mlm_loss<F: Real>(
    cfg: &EncoderConfig,
    params: &Params<F>,
    batch: &MaskedBatch,
    mode: Mode,
    with_grad: bool,
) -> Result<Step<F>, ObjectiveError> {
    if params.mlm.is_none() {
        return Err(ObjectiveError::ShapeMismatch("model has no MLM head".into()));
    }
    let fwd = forward(cfg, &params.encoder, &batch.input, mode)?;
    let (loss, g) = mlm_head_loss(params, &fwd, batch, with_grad)?;
    Ok(finish(cfg, params, &fwd, loss, g))
}

/// MLM loss on a computed encoder output.
pub fn mlm_head_loss<F: Real>(
    params: &Params<F>,
    fwd: &Forward<F>,
    batch: &MaskedBatch,
    with_grad: bool,
) -> Result<(f64, Option<HeadGrad<F>>), ObjectiveError> {
    let head = params
        .mlm
        .as_ref()
        .ok_or_else(|| ObjectiveError::ShapeMismatch("model has no MLM head".into()))?;
    let rows = selected_rows(batch);
    if rows.is_empty() {
        return Err(ObjectiveError::NoMaskedTokens);
    }
    let idx: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let h = fwd.hidden.select(Axis(0), &idx);
    let mut probs = h.dot(&head.w);
    probs += &head.b;
    let m = rows.len();
    let mut loss = 0.0;
    for (mut row, &(_, y)) in probs.rows_mut().into_iter().zip(&rows) {
        softmax_row(&mut row);
        loss -= row[y as usize].to_f64().unwrap().ln();
    }
    loss /= m as f64;
    if !with_grad {
        return Ok((loss, None));
    }
    let mut dlogits = probs;
    let inv_m = F::of(1.0 / m as f64);
    for (mut row, &(_, y)) in dlogits.rows_mut().into_iter().zip(&rows) {
        row[y as usize] -= F::one();
        row *= inv_m;
    }
    let mut grads = params.zeros_like();
    let gh = grads.mlm.as_mut().unwrap();
    let dh_sel = crate::encoder::linear_backward(&h.view(), &head.w, &dlogits, &mut gh.w, &mut gh.b);
    let mut d_hidden = Array2::zeros(fwd.hidden.raw_dim());
    for (row, &i) in dh_sel.rows().into_iter().zip(&idx) {
        d_hidden.row_mut(i).assign(&row);
    }
    Ok((loss, Some(HeadGrad { d_hidden, grads })))
}

/// Fraction of selected positions whose arg-max prediction is the original
/// id (eval mode).
pub fn mlm_accuracy<F: Real>(cfg: &EncoderConfig, params: &Params<F>, batch: &MaskedBatch) -> Result<f64, ObjectiveError> {
    let head = params
        .mlm
        .as_ref()
        .ok_or_else(|| ObjectiveError::ShapeMismatch("model has no MLM head".into()))?;
    let rows = selected_rows(batch);
    if rows.is_empty() {
        return Err(ObjectiveError::NoMaskedTokens);
    }
    let fwd = forward(cfg, &params.encoder, &batch.input, Mode::Eval)?;
    let idx: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let mut logits = fwd.hidden.select(Axis(0), &idx).dot(&head.w);
    logits += &head.b;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&rows)
        .filter(|(row, &(_, y))| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            best.0 == y as usize
        })
        .count();
    Ok(correct as f64 / rows.len() as f64)
}

/// Mean squared error over all `N x D` entries of a two-layer head applied
/// to the first-token hidden state.
pub fn mtr_loss<F: Real>(
    cfg: &EncoderConfig,
    params: &Params<F>,
    batch: &TokenizedBatch,
    targets: &Array2<F>,
    mode: Mode,
    with_grad: bool,
) -> Result<Step<F>, ObjectiveError> {
    let head = params
        .mtr
        .as_ref()
        .ok_or_else(|| ObjectiveError::ShapeMismatch("model has no MTR head".into()))?;
    if targets.nrows() != batch.batch_size() || targets.ncols() != head.out_dim() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "targets {:?} vs batch {} and head width {}",
            targets.dim(),
            batch.batch_size(),
            head.out_dim()
        )));
    }
    let fwd = forward(cfg, &params.encoder, batch, mode)?;
    let (loss, g) = mtr_head_loss(cfg, params, &fwd, targets, mode, with_grad)?;
    Ok(finish(cfg, params, &fwd, loss, g))
}

/// MTR loss on a computed encoder output. `mode` drives the head dropout.
pub fn mtr_head_loss<F: Real>(
    cfg: &EncoderConfig,
    params: &Params<F>,
    fwd: &Forward<F>,
    targets: &Array2<F>,
    mode: Mode,
    with_grad: bool,
) -> Result<(f64, Option<HeadGrad<F>>), ObjectiveError> {
    let head = params
        .mtr
        .as_ref()
        .ok_or_else(|| ObjectiveError::ShapeMismatch("model has no MTR head".into()))?;
    if targets.nrows() != fwd.batch || targets.ncols() != head.out_dim() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "targets {:?} vs batch {} and head width {}",
            targets.dim(),
            fwd.batch,
            head.out_dim()
        )));
    }
    let h = pool(fwd, Pooling::Cls);
    let mut z = h.dot(&head.w1);
    z += &head.b1;
    let mut r = z.mapv(|v| v.max(F::zero()));
    let drop = match mode {
        Mode::Train { seed: s } if cfg.head_dropout > 0.0 => {
            let mut rng = seed::rng(s, "head-dropout", 0);
            let keep = F::of(1.0 / (1.0 - cfg.head_dropout));
            let p = cfg.head_dropout;
            Some(Array2::from_shape_simple_fn(r.raw_dim(), || {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    keep
                }
            }))
        }
        _ => None,
    };
    if let Some(m) = &drop {
        r *= m;
    }
    let mut y = r.dot(&head.w2);
    y += &head.b2;
    let diff = &y - targets;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|d| d.to_f64().unwrap().powi(2)).sum::<f64>() / count;
    if !with_grad {
        return Ok((loss, None));
    }
    let dy = diff * F::of(2.0 / count);
    let mut grads = params.zeros_like();
    let gh = grads.mtr.as_mut().unwrap();
    let mut dr = crate::encoder::linear_backward(&r.view(), &head.w2, &dy, &mut gh.w2, &mut gh.b2);
    if let Some(m) = &drop {
        dr *= m;
    }
    dr.zip_mut_with(&z, |g, &zv| {
        if zv <= F::zero() {
            *g = F::zero()
        }
    });
    let dh = crate::encoder::linear_backward(&h.view(), &head.w1, &dr, &mut gh.w1, &mut gh.b1);
    let d_hidden = pool_backward(fwd, &dh, Pooling::Cls);
    Ok((loss, Some(HeadGrad { d_hidden, grads })))
}

struct Unit<F> {
    dir: Array2<F>,
    norm: Array1<F>,
}

fn normalize<F: Real>(x: &Array2<F>, row_offset: usize) -> Result<Unit<F>, ObjectiveError> {
    let norm: Array1<F> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norm.iter().position(|&n| n == F::zero() || !n.is_finite()) {
        return Err(ObjectiveError::ZeroVector(row_offset + i));
    }
    let dir = x / &norm.view().insert_axis(Axis(1));
    Ok(Unit { dir, norm })
}

fn normalize_backward<F: Real>(u: &Unit<F>, d_dir: &Array2<F>) -> Array2<F> {
    let mut dx = d_dir.clone();
    for ((mut g, d), &n) in dx.rows_mut().into_iter().zip(u.dir.rows()).zip(&u.norm) {
        let proj = g.dot(&d);
        g.zip_mut_with(&d, |gv, &dv| *gv = (*gv - dv * proj) / n);
    }
    dx
}

/// Loss term of one anchor given its positive similarity `sp` and its
/// similarities `sn` to every negative, with the derivatives with respect to
/// `sp` and each `sn[j]`.
pub fn contrastive_terms(sp: f64, sn: &[f64], variant: ClVariant) -> (f64, f64, Vec<f64>) {
    match variant {
        ClVariant::Standard => {
            let m = sn.iter().fold(sp, |a, &b| a.max(b));
            let z = (sp - m).exp() + sn.iter().map(|s| (s - m).exp()).sum::<f64>();
            let loss = m + z.ln() - sp;
            let dn = sn.iter().map(|s| (s - m).exp() / z).collect();
            (loss, (sp - m).exp() / z - 1.0, dn)
        }
        ClVariant::PaperLiteral => {
            let m = sn.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let z = sn.iter().map(|s| (s - m).exp()).sum::<f64>();
            let dn = sn.iter().map(|s| -(s - m).exp() / z).collect();
            (sp - (m + z.ln()), 1.0, dn)
        }
    }
}

/// Contrastive loss over `K` triples with cosine similarity on mean-pooled
/// embeddings. Every negative in the batch counts for every anchor.
pub fn cl_loss<F: Real>(
    cfg: &EncoderConfig,
    params: &Params<F>,
    triples: &TripleBatch,
    variant: ClVariant,
    mode: Mode,
    with_grad: bool,
) -> Result<Step<F>, ObjectiveError> {
    let fwd = forward(cfg, &params.encoder, &triples.tokens, mode)?;
    let (loss, g) = cl_head_loss(params, &fwd, triples.len(), variant, with_grad)?;
    Ok(finish(cfg, params, &fwd, loss, g))
}

/// Contrastive loss on a computed encoder output whose rows are `k`
/// canonical, `k` enumerated and `k` negative sequences.
pub fn cl_head_loss<F: Real>(
    params: &Params<F>,
    fwd: &Forward<F>,
    k: usize,
    variant: ClVariant,
    with_grad: bool,
) -> Result<(f64, Option<HeadGrad<F>>), ObjectiveError> {
    if fwd.batch != 3 * k || k == 0 {
        return Err(ObjectiveError::ShapeMismatch(format!("{} sequences for {k} triples", fwd.batch)));
    }
    let emb = pool(fwd, Pooling::Mean);
    let c = normalize(&emb.slice(ndarray::s![..k, ..]).to_owned(), 0)?;
    let e = normalize(&emb.slice(ndarray::s![k..2 * k, ..]).to_owned(), k)?;
    let n = normalize(&emb.slice(ndarray::s![2 * k.., ..]).to_owned(), 2 * k)?;
    let pos: Array1<F> = c.dir.rows().into_iter().zip(e.dir.rows()).map(|(a, b)| a.dot(&b)).collect();
    let neg = c.dir.dot(&n.dir.t());
    let kf = k as f64;
    let mut loss = 0.0;
    let mut d_pos = Array1::<F>::zeros(k);
    let mut d_neg = Array2::<F>::zeros((k, k));
    for i in 0..k {
        let sn: Vec<f64> = neg.row(i).iter().map(|v| v.to_f64().unwrap()).collect();
        let (l, dp, dn) = contrastive_terms(pos[i].to_f64().unwrap(), &sn, variant);
        loss += l;
        d_pos[i] = F::of(dp / kf);
        for j in 0..k {
            d_neg[[i, j]] = F::of(dn[j] / kf);
        }
    }
    loss /= kf;
    if !with_grad {
        return Ok((loss, None));
    }
    let dp_col = d_pos.view().insert_axis(Axis(1));
    let dc_dir = &e.dir * &dp_col + d_neg.dot(&n.dir);
    let de_dir = &c.dir * &dp_col;
    let dn_dir = d_neg.t().dot(&c.dir);
    let mut d_emb = Array2::zeros(emb.raw_dim());
    d_emb.slice_mut(ndarray::s![..k, ..]).assign(&normalize_backward(&c, &dc_dir));
    d_emb.slice_mut(ndarray::s![k..2 * k, ..]).assign(&normalize_backward(&e, &de_dir));
    d_emb.slice_mut(ndarray::s![2 * k.., ..]).assign(&normalize_backward(&n, &dn_dir));
    let d_hidden = pool_backward(fwd, &d_emb, Pooling::Mean);
    Ok((
        loss,
        Some(HeadGrad {
            d_hidden,
            grads: params.zeros_like(),
        }),
    ))
}

/// Fraction of triples with `sim(c_i, e_i) > sim(c_i, n_i)` (eval mode).
pub fn cl_margin_rate<F: Real>(cfg: &EncoderConfig, params: &Params<F>, triples: &TripleBatch) -> Result<f64, ObjectiveError> {
    let k = triples.len();
    let fwd = forward(cfg, &params.encoder, &triples.tokens, Mode::Eval)?;
    let emb = pool(&fwd, Pooling::Mean);
    let u = normalize(&emb, 0)?;
    let wins = (0..k)
        .filter(|&i| u.dir.row(i).dot(&u.dir.row(k + i)) > u.dir.row(i).dot(&u.dir.row(2 * k + i)))
        .count();
    Ok(wins as f64 / k as f64)
}
