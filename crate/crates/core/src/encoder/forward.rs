use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, EncoderError, EncoderParams, LayerParams, LnPlacement, Mode, Real};
use crate::seed;
use crate::tokenizer::TokenizedBatch;

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4;

#[derive(Clone)]
struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

#[derive(Clone)]
struct LayerCache<F> {
    /// Attention input: LN1(x) with pre-LN, x itself with post-LN.
    h1: Array2<F>,
    ln1: LnCache<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Softmax output per (sequence, head), before dropout.
    probs: Vec<Array2<F>>,
    prob_drop: Vec<Option<Array2<F>>>,
    ctx: Array2<F>,
    attn_drop: Option<Array2<F>>,
    /// Residual stream after attention.
    mid: Array2<F>,
    /// FFN input: LN2(x_mid) with pre-LN, LN1(x + attn) with post-LN.
    h2: Array2<F>,
    ln2: LnCache<F>,
    u: Array2<F>,
    g: Array2<F>,
    ffn_drop: Option<Array2<F>>,
}

struct LayerMasks<F> {
    probs: Vec<Option<Array2<F>>>,
    attn: Option<Array2<F>>,
    ffn: Option<Array2<F>>,
}

/// Point inside a layer from which a recorded pass can be recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LayerPart {
    Input,
    Query,
    Key,
    Value,
    Output,
    Ffn,
    FfnOut,
}

impl LayerPart {
    /// First part that reads the layer tensor `name`, e.g. `attn.wq`.
    pub fn of(name: &str, ln: LnPlacement) -> Option<Self> {
        let pre = ln == LnPlacement::Pre;
        Some(match name {
            "ln1.gain" | "ln1.bias" if pre => LayerPart::Input,
            "ln1.gain" | "ln1.bias" => LayerPart::Ffn,
            "attn.wq" | "attn.bq" => LayerPart::Query,
            "attn.wk" | "attn.bk" => LayerPart::Key,
            "attn.wv" | "attn.bv" => LayerPart::Value,
            "attn.wo" | "attn.bo" => LayerPart::Output,
            "ln2.gain" | "ln2.bias" if pre => LayerPart::Ffn,
            "ln2.gain" | "ln2.bias" => LayerPart::FfnOut,
            "ffn.w1" | "ffn.b1" => LayerPart::Ffn,
            "ffn.w2" | "ffn.b2" => LayerPart::FfnOut,
            _ => return None,
        })
    }
}

/// Result of a forward pass together with everything backward needs.
#[derive(Clone)]
pub struct Forward<F> {
    /// `(batch * width, hidden_dim)`.
    pub hidden: Array2<F>,
    pub batch: usize,
    pub width: usize,
    ids: Array2<u32>,
    key_mask: Array2<u8>,
    ln_placement: LnPlacement,
    emb_drop: Option<Array2<F>>,
    /// Embedding LN (post) or final LN (pre).
    outer: LnCache<F>,
    layers: Vec<LayerCache<F>>,
}

impl<F: Real> Forward<F> {
    pub fn hidden_3d(&self) -> ArrayView3<'_, F> {
        self.hidden
            .view()
            .into_shape_with_order((self.batch, self.width, self.hidden.ncols()))
            .expect("hidden is contiguous")
    }

    pub fn attention_mask(&self) -> ArrayView2<'_, u8> {
        self.key_mask.view()
    }
}

fn dropout_mask<F: Real>(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<F> {
    let keep = F::of(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { F::zero() } else { keep })
}

fn ln_forward<F: Real>(x: &Array2<F>, g: &Array1<F>, b: &Array1<F>) -> (Array2<F>, LnCache<F>) {
    let d = F::of(x.ncols() as f64);
    let eps = F::of(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        *r = F::one() / (var + eps).sqrt();
        row *= *r;
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

fn ln_backward<F: Real>(
    dy: &Array2<F>,
    c: &LnCache<F>,
    g: &Array1<F>,
    dg: &mut Array1<F>,
    db: &mut Array1<F>,
) -> Array2<F> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let d = F::of(dy.ncols() as f64);
    let mut dx = dy * g;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(&c.rstd) {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>() / d;
        row.zip_mut_with(&xh, |v, &x| *v = r * (*v - m1 - x * m2));
    }
    dx
}

fn linear<F: Real>(x: &Array2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates weight and bias gradients, returns the input gradient.
pub(crate) fn linear_backward<F: Real>(
    x: &ArrayView2<F>,
    w: &Array2<F>,
    dy: &Array2<F>,
    dw: &mut Array2<F>,
    db: &mut Array1<F>,
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

fn gelu<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + F::of(0.044715) * x * x * x)).tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let half = F::of(0.5);
    let t = (c * (x + F::of(0.044715) * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0 * 0.044715) * x * x)
}

fn apply_mask<F: Real>(x: &mut Array2<F>, m: &Option<Array2<F>>) {
    if let Some(m) = m {
        *x *= m;
    }
}

struct Blocks {
    batch: usize,
    width: usize,
    heads: usize,
    head_dim: usize,
}

impl Blocks {
    fn rows(&self, b: usize) -> Range<usize> {
        b * self.width..(b + 1) * self.width
    }
    fn cols(&self, h: usize) -> Range<usize> {
        h * self.head_dim..(h + 1) * self.head_dim
    }
}

fn check_batch(cfg: &EncoderConfig, batch: &TokenizedBatch) -> Result<(), EncoderError> {
    let (b, t) = batch.ids.dim();
    if batch.attention_mask.dim() != (b, t) {
        return Err(EncoderError::ShapeMismatch(format!(
            "attention mask {:?} vs ids {:?}",
            batch.attention_mask.dim(),
            (b, t)
        )));
    }
    if t > cfg.max_len || t == 0 || b == 0 {
        return Err(EncoderError::ShapeMismatch(format!(
            "batch width {t} (rows {b}) outside 1..={}",
            cfg.max_len
        )));
    }
    if let Some(&bad) = batch.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(EncoderError::ShapeMismatch(format!(
            "token id {bad} >= vocab size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

struct Stage<'a> {
    cfg: &'a EncoderConfig,
    batch: &'a TokenizedBatch,
    blocks: Blocks,
    mode: Mode,
}

impl<'a> Stage<'a> {
    fn new(cfg: &'a EncoderConfig, batch: &'a TokenizedBatch, mode: Mode) -> Result<Self, EncoderError> {
        check_batch(cfg, batch)?;
        let (bsz, t) = batch.ids.dim();
        Ok(Stage {
            cfg,
            batch,
            blocks: Blocks {
                batch: bsz,
                width: t,
                heads: cfg.heads,
                head_dim: cfg.head_dim(),
            },
            mode,
        })
    }

    /// Dropout masks of the embeddings (stage 0) and of layer `i` (stage
    /// `i + 1`) come from separate streams.
    fn rng(&self, stage: usize) -> Option<ChaCha8Rng> {
        match self.mode {
            Mode::Train { seed } if self.cfg.dropout_rate > 0.0 => Some(seed::rng(seed, "dropout", stage as u64)),
            _ => None,
        }
    }

    fn pre(&self) -> bool {
        self.cfg.ln_placement == LnPlacement::Pre
    }

    fn embed<F: Real>(&self, p: &EncoderParams<F>) -> (Array2<F>, Option<LnCache<F>>, Option<Array2<F>>) {
        let t = self.blocks.width;
        let mut x = Array2::zeros((self.blocks.batch * t, self.cfg.hidden_dim));
        for (r, mut row) in x.rows_mut().into_iter().enumerate() {
            let id = self.batch.ids[[r / t, r % t]] as usize;
            row.assign(&p.tok_emb.row(id));
            row += &p.pos_emb.row(r % t);
        }
        let mut outer = None;
        if !self.pre() {
            let (y, c) = ln_forward(&x, &p.outer_ln_g, &p.outer_ln_b);
            x = y;
            outer = Some(c);
        }
        let mut rng = self.rng(0);
        let drop = rng.as_mut().map(|r| dropout_mask::<F>(r, x.dim(), self.cfg.dropout_rate));
        apply_mask(&mut x, &drop);
        (x, outer, drop)
    }

    fn layer<F: Real>(&self, li: usize, lp: &LayerParams<F>, x: Array2<F>) -> (Array2<F>, LayerCache<F>) {
        let (n, t) = (x.nrows(), self.blocks.width);
        let mut rng = self.rng(li + 1);
        let rate = self.cfg.dropout_rate;
        let mut drop = |shape: (usize, usize)| rng.as_mut().map(|r| dropout_mask::<F>(r, shape, rate));
        let masks = LayerMasks {
            probs: (0..self.blocks.batch * self.blocks.heads).map(|_| drop((t, t))).collect(),
            attn: drop((n, x.ncols())),
            ffn: drop((n, x.ncols())),
        };
        self.layer_core(lp, &x, LayerPart::Input, None, masks)
    }

    /// Runs a layer from part `from` on, taking everything before it from
    /// `base`. Without `base` the whole layer is computed.
    fn layer_core<F: Real>(
        &self,
        lp: &LayerParams<F>,
        x: &Array2<F>,
        from: LayerPart,
        base: Option<&LayerCache<F>>,
        masks: LayerMasks<F>,
    ) -> (Array2<F>, LayerCache<F>) {
        use LayerPart::*;
        let upto = |p: LayerPart| base.is_none() || from <= p;
        let only = |p: LayerPart| base.is_none() || from == Input || from == p;
        let rec = || base.expect("recorded layer");
        let pre = self.pre();
        let (h1, ln_in) = if !upto(Input) {
            (rec().h1.clone(), pre.then(|| rec().ln1.clone()))
        } else if pre {
            let (y, c) = ln_forward(x, &lp.ln1_g, &lp.ln1_b);
            (y, Some(c))
        } else {
            (x.clone(), None)
        };
        let q = if only(Query) { linear(&h1, &lp.wq, &lp.bq) } else { rec().q.clone() };
        let k = if only(Key) { linear(&h1, &lp.wk, &lp.bk) } else { rec().k.clone() };
        let v = if only(Value) { linear(&h1, &lp.wv, &lp.bv) } else { rec().v.clone() };
        let (probs, ctx) = if upto(Value) {
            self.attend(&q, &k, &v, &masks.probs)
        } else {
            (rec().probs.clone(), rec().ctx.clone())
        };
        let mid = if upto(Output) {
            let mut a = linear(&ctx, &lp.wo, &lp.bo);
            apply_mask(&mut a, &masks.attn);
            x + &a
        } else {
            rec().mid.clone()
        };
        let (h2, ln_mid, u, g) = if upto(Ffn) {
            let (h2, c) = if pre {
                ln_forward(&mid, &lp.ln2_g, &lp.ln2_b)
            } else {
                ln_forward(&mid, &lp.ln1_g, &lp.ln1_b)
            };
            let u = linear(&h2, &lp.w1, &lp.b1);
            let g = u.mapv(gelu);
            (h2, c, u, g)
        } else {
            let r = rec();
            let c = if pre { r.ln2.clone() } else { r.ln1.clone() };
            (r.h2.clone(), c, r.u.clone(), r.g.clone())
        };
        let mut f = linear(&g, &lp.w2, &lp.b2);
        apply_mask(&mut f, &masks.ffn);
        let (out, ln1, ln2) = if pre {
            (&mid + &f, ln_in.expect("pre-LN input norm"), ln_mid)
        } else {
            let (y, c) = ln_forward(&(&h2 + &f), &lp.ln2_g, &lp.ln2_b);
            (y, ln_mid, c)
        };
        let cache = LayerCache {
            h1,
            ln1,
            q,
            k,
            v,
            probs,
            prob_drop: masks.probs,
            ctx,
            attn_drop: masks.attn,
            mid,
            h2,
            ln2,
            u,
            g,
            ffn_drop: masks.ffn,
        };
        (out, cache)
    }

    /// Masked multi-head attention; returns the softmax outputs per
    /// (sequence, head) and the context.
    fn attend<F: Real>(
        &self,
        q: &Array2<F>,
        k: &Array2<F>,
        v: &Array2<F>,
        prob_drop: &[Option<Array2<F>>],
    ) -> (Vec<Array2<F>>, Array2<F>) {
        let (blocks, t) = (&self.blocks, self.blocks.width);
        let scale = F::of(1.0 / (blocks.head_dim as f64).sqrt());
        let mut ctx = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(blocks.batch * blocks.heads);
        for b in 0..blocks.batch {
            let rows = blocks.rows(b);
            for h in 0..blocks.heads {
                let cols = blocks.cols(h);
                let qb = q.slice(s![rows.clone(), cols.clone()]);
                let kb = k.slice(s![rows.clone(), cols.clone()]);
                let vb = v.slice(s![rows.clone(), cols.clone()]);
                let mut sc = qb.dot(&kb.t());
                sc *= scale;
                for j in 0..t {
                    if self.batch.attention_mask[[b, j]] == 0 {
                        sc.column_mut(j).fill(F::neg_infinity());
                    }
                }
                for mut row in sc.rows_mut() {
                    let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
                    row.mapv_inplace(|v| (v - m).exp());
                    let z = row.sum();
                    row /= z;
                }
                let used = match &prob_drop[b * blocks.heads + h] {
                    Some(m) => &sc * m,
                    None => sc.clone(),
                };
                ctx.slice_mut(s![rows.clone(), cols]).assign(&used.dot(&vb));
                probs.push(sc);
            }
        }
        (probs, ctx)
    }

    fn finish<F: Real>(&self, p: &EncoderParams<F>, x: Array2<F>) -> (Array2<F>, Option<LnCache<F>>) {
        if self.pre() {
            let (y, c) = ln_forward(&x, &p.outer_ln_g, &p.outer_ln_b);
            (y, Some(c))
        } else {
            (x, None)
        }
    }
}

/// Runs the encoder. Padded keys are excluded from attention; padded query
/// rows are still computed but influence nothing else.
pub fn forward<F: Real>(
    cfg: &EncoderConfig,
    p: &EncoderParams<F>,
    batch: &TokenizedBatch,
    mode: Mode,
) -> Result<Forward<F>, EncoderError> {
    let st = Stage::new(cfg, batch, mode)?;
    let (mut x, emb_ln, emb_drop) = st.embed(p);
    let mut layers = Vec::with_capacity(p.layers.len());
    for (li, lp) in p.layers.iter().enumerate() {
        let (y, cache) = st.layer(li, lp, x);
        x = y;
        layers.push(cache);
    }
    let (hidden, final_ln) = st.finish(p, x);
    Ok(Forward {
        hidden,
        batch: st.blocks.batch,
        width: st.blocks.width,
        ids: batch.ids.clone(),
        key_mask: batch.attention_mask.clone(),
        ln_placement: cfg.ln_placement,
        emb_drop,
        outer: emb_ln.or(final_ln).expect("one outer norm"),
        layers,
    })
}

/// Input of the first layer.
pub fn embeddings<F: Real>(
    cfg: &EncoderConfig,
    p: &EncoderParams<F>,
    batch: &TokenizedBatch,
    mode: Mode,
) -> Result<Array2<F>, EncoderError> {
    Ok(Stage::new(cfg, batch, mode)?.embed(p).0)
}

/// States entering each layer; the last entry is the output of the final
/// layer, before the closing norm with pre-LN.
pub fn layer_inputs<F: Real>(
    cfg: &EncoderConfig,
    p: &EncoderParams<F>,
    batch: &TokenizedBatch,
    mode: Mode,
) -> Result<Vec<Array2<F>>, EncoderError> {
    let st = Stage::new(cfg, batch, mode)?;
    let mut out = vec![st.embed(p).0];
    for (li, lp) in p.layers.iter().enumerate() {
        let x = st.layer(li, lp, out[li].clone()).0;
        out.push(x);
    }
    Ok(out)
}

/// Hidden states of a forward pass resumed at layer `start` from its input
/// `x`, as produced by [`layer_inputs`]. Matches [`forward`] bitwise.
pub fn forward_from<F: Real>(
    cfg: &EncoderConfig,
    p: &EncoderParams<F>,
    batch: &TokenizedBatch,
    mode: Mode,
    start: usize,
    mut x: Array2<F>,
) -> Result<Array2<F>, EncoderError> {
    let st = Stage::new(cfg, batch, mode)?;
    for (li, lp) in p.layers.iter().enumerate().skip(start) {
        x = st.layer(li, lp, x).0;
    }
    Ok(st.finish(p, x).0)
}

/// Output of layer `li` for input `x`, recomputed from part `from` on with
/// parameters `p` and taken from the recorded pass `fwd` before it. Dropout
/// masks are those of `fwd`.
pub fn layer_from<F: Real>(
    cfg: &EncoderConfig,
    p: &EncoderParams<F>,
    fwd: &Forward<F>,
    batch: &TokenizedBatch,
    li: usize,
    x: &Array2<F>,
    from: LayerPart,
) -> Result<Array2<F>, EncoderError> {
    let st = Stage::new(cfg, batch, Mode::Eval)?;
    let c = &fwd.layers[li];
    let masks = LayerMasks {
        probs: c.prob_drop.clone(),
        attn: c.attn_drop.clone(),
        ffn: c.ffn_drop.clone(),
    };
    Ok(st.layer_core(&p.layers[li], x, from, Some(c), masks).0)
}

fn attention_backward<F: Real>(
    blocks: &Blocks,
    c: &LayerCache<F>,
    dctx: &Array2<F>,
    scale: F,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for b in 0..blocks.batch {
        let rows = blocks.rows(b);
        for h in 0..blocks.heads {
            let idx = b * blocks.heads + h;
            let cols = blocks.cols(h);
            let p = &c.probs[idx];
            let mask = &c.prob_drop[idx];
            let qb = c.q.slice(s![rows.clone(), cols.clone()]);
            let kb = c.k.slice(s![rows.clone(), cols.clone()]);
            let vb = c.v.slice(s![rows.clone(), cols.clone()]);
            let dc = dctx.slice(s![rows.clone(), cols.clone()]);
            let used = match mask {
                Some(m) => p * m,
                None => p.clone(),
            };
            let mut dv_b = dv.slice_mut(s![rows.clone(), cols.clone()]);
            dv_b += &used.t().dot(&dc);
            let mut dp = dc.dot(&vb.t());
            if let Some(m) = mask {
                dp *= m;
            }
            for (mut drow, prow) in dp.rows_mut().into_iter().zip(p.rows()) {
                let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<F>();
                drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - dot) * scale);
            }
            let mut dq_b = dq.slice_mut(s![rows.clone(), cols.clone()]);
            dq_b += &dp.dot(&kb);
            let mut dk_b = dk.slice_mut(s![rows.clone(), cols]);
            dk_b += &dp.t().dot(&qb);
        }
    }
    (dq, dk, dv)
}

fn layer_backward<F: Real>(
    blocks: &Blocks,
    pre: bool,
    lp: &LayerParams<F>,
    c: &LayerCache<F>,
    dx_out: Array2<F>,
    gl: &mut LayerParams<F>,
) -> Array2<F> {
    // gradient w.r.t. the FFN block output (before the residual sum)
    let ds2 = if pre {
        dx_out
    } else {
        ln_backward(&dx_out, &c.ln2, &lp.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b)
    };
    let mut df = ds2.clone();
    apply_mask(&mut df, &c.ffn_drop);
    let mut du = linear_backward(&c.g.view(), &lp.w2, &df, &mut gl.w2, &mut gl.b2);
    du.zip_mut_with(&c.u, |g, &u| *g *= gelu_grad(u));
    let dh2 = linear_backward(&c.h2.view(), &lp.w1, &du, &mut gl.w1, &mut gl.b1);
    let ds1 = if pre {
        ds2 + ln_backward(&dh2, &c.ln2, &lp.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b)
    } else {
        ln_backward(&(ds2 + dh2), &c.ln1, &lp.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b)
    };
    let mut da = ds1.clone();
    apply_mask(&mut da, &c.attn_drop);
    let dctx = linear_backward(&c.ctx.view(), &lp.wo, &da, &mut gl.wo, &mut gl.bo);
    let scale = F::of(1.0 / (blocks.head_dim as f64).sqrt());
    let (dq, dk, dv) = attention_backward(blocks, c, &dctx, scale);
    let h1 = c.h1.view();
    let mut dh1 = linear_backward(&h1, &lp.wq, &dq, &mut gl.wq, &mut gl.bq);
    dh1 += &linear_backward(&h1, &lp.wk, &dk, &mut gl.wk, &mut gl.bk);
    dh1 += &linear_backward(&h1, &lp.wv, &dv, &mut gl.wv, &mut gl.bv);
    if pre {
        ds1 + ln_backward(&dh1, &c.ln1, &lp.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b)
    } else {
        ds1 + dh1
    }
}

/// Accumulates parameter gradients into `grads` given `d_hidden`, the loss
/// gradient with respect to `fwd.hidden`.
pub fn backward<F: Real>(
    cfg: &EncoderConfig,
    p: &EncoderParams<F>,
    fwd: &Forward<F>,
    d_hidden: &Array2<F>,
    grads: &mut EncoderParams<F>,
) {
    backward_traced(cfg, p, fwd, d_hidden, grads);
}

/// [`backward`] that also returns the loss gradient with respect to each
/// entry of [`layer_inputs`].
pub fn backward_traced<F: Real>(
    cfg: &EncoderConfig,
    p: &EncoderParams<F>,
    fwd: &Forward<F>,
    d_hidden: &Array2<F>,
    grads: &mut EncoderParams<F>,
) -> Vec<Array2<F>> {
    assert_eq!(d_hidden.dim(), fwd.hidden.dim(), "d_hidden shape");
    let pre = fwd.ln_placement == LnPlacement::Pre;
    let blocks = Blocks {
        batch: fwd.batch,
        width: fwd.width,
        heads: cfg.heads,
        head_dim: cfg.head_dim(),
    };
    let mut dx = if pre {
        ln_backward(d_hidden, &fwd.outer, &p.outer_ln_g, &mut grads.outer_ln_g, &mut grads.outer_ln_b)
    } else {
        d_hidden.clone()
    };
    let mut trace = vec![dx.clone()];
    for (li, c) in fwd.layers.iter().enumerate().rev() {
        dx = layer_backward(&blocks, pre, &p.layers[li], c, dx, &mut grads.layers[li]);
        trace.push(dx.clone());
    }
    trace.reverse();
    apply_mask(&mut dx, &fwd.emb_drop);
    if !pre {
        dx = ln_backward(&dx, &fwd.outer, &p.outer_ln_g, &mut grads.outer_ln_g, &mut grads.outer_ln_b);
    }
    let t = fwd.width;
    for (r, row) in dx.rows().into_iter().enumerate() {
        let id = fwd.ids[[r / t, r % t]] as usize;
        let mut te = grads.tok_emb.row_mut(id);
        te += &row;
        let mut pe = grads.pos_emb.row_mut(r % t);
        pe += &row;
    }
    trace
}
