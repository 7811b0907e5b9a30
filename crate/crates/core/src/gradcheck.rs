//! Central finite-difference check of every encoder and head parameter at
//! 64-bit precision.
//!
//! The encoder is checked through a fixed random linear read-out of its
//! hidden states, one layer at a time: a layer's parameters against the
//! analytic gradient arriving at its output, and that gradient against a
//! difference through the layer above. Each objective is then checked with
//! respect to the hidden states and to its own head parameters. By the
//! chain rule these pieces cover the full gradient of every objective.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::encoder::{
    backward_traced, embeddings, forward, forward_from, layer_from, layer_inputs, EncoderConfig, EncoderParams, Forward,
    LayerPart, LnPlacement, MlmHead, Mode, MtrHead, Params,
};
use crate::objectives::{cl_head_loss, mlm_head_loss, mtr_head_loss, ClVariant, MaskedBatch, ObjectiveError};
use crate::seed;
use crate::tokenizer::{TokenizedBatch, CLS, MASK, NUM_SPECIALS, SEP};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tolerance: f64,
    /// Denominator floor so that gradients at the rounding-noise level are
    /// compared absolutely.
    pub floor: f64,
    pub seed: u64,
    /// Number of triples in the contrastive batch.
    pub triples: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 2e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            seed: 7,
            triples: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    /// What was differentiated, e.g. `encoder` or `mlm`.
    pub scope: String,
    pub name: String,
    pub entries: usize,
    pub max_rel: f64,
    pub worst: usize,
    /// Analytic and numeric derivative at `worst`.
    pub worst_pair: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl GradCheckReport {
    pub fn entries(&self) -> usize {
        self.tensors.iter().map(|t| t.entries).sum()
    }

    pub fn max_rel(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| t.max_rel >= self.tolerance).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

struct Sweep<'a> {
    cfg: &'a GradCheckConfig,
    out: Vec<TensorCheck>,
}

impl Sweep<'_> {
    /// Compares the central difference of `eval(k, value)`, the objective
    /// with entry `k` replaced by `value`, against `analytic`.
    fn run<E>(&mut self, scope: &str, name: &str, analytic: &[f64], values: &[f64], mut eval: E) -> Result<(), ObjectiveError>
    where
        E: FnMut(usize, f64) -> Result<f64, ObjectiveError>,
    {
        let h = self.cfg.step;
        let mut check = TensorCheck {
            scope: scope.to_string(),
            name: name.to_string(),
            entries: values.len(),
            max_rel: 0.0,
            worst: 0,
            worst_pair: (0.0, 0.0),
        };
        for (k, &x) in values.iter().enumerate() {
            let lp = eval(k, x + h)?;
            let lm = eval(k, x - h)?;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = relative_error(analytic[k], numeric, self.cfg.floor);
            if rel > check.max_rel {
                check.max_rel = rel;
                check.worst = k;
                check.worst_pair = (analytic[k], numeric);
            }
        }
        self.out.push(check);
        Ok(())
    }
}

fn random_ids<R: Rng>(rng: &mut R, vocab: usize) -> u32 {
    rng.random_range(NUM_SPECIALS..vocab as u32)
}

fn batch(rows: Vec<Vec<u32>>) -> TokenizedBatch {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = Array2::zeros((rows.len(), width));
    let mut mask = Array2::zeros((rows.len(), width));
    for (r, row) in rows.iter().enumerate() {
        for (c, &id) in row.iter().enumerate() {
            ids[[r, c]] = id;
            mask[[r, c]] = 1;
        }
    }
    TokenizedBatch {
        ids,
        attention_mask: mask,
        lengths: rows.iter().map(Vec::len).collect(),
    }
}

/// Checks every parameter of an encoder built from `enc` with an MLM head
/// and an MTR head of width `mtr_dim`, in training mode so that dropout
/// masks are part of the differentiated function.
pub fn gradient_check(enc: &EncoderConfig, mtr_dim: usize, gc: &GradCheckConfig) -> Result<GradCheckReport, ObjectiveError> {
    let start = Instant::now();
    enc.validate()?;
    let d = enc.hidden_dim;
    let mut params = Params::new(EncoderParams::<f64>::init(enc));
    params.mlm = Some(MlmHead::init(d, enc.vocab_size, seed::derive(gc.seed, "mlm-head", 0), enc.init_std));
    params.mtr = Some(MtrHead::init(d, mtr_dim, seed::derive(gc.seed, "mtr-head", 0), enc.init_std));
    let mode = Mode::Train {
        seed: seed::derive(gc.seed, "dropout", 0),
    };
    let mut rng = seed::rng(gc.seed, "gradcheck", 0);
    let v = enc.vocab_size;

    // one short sequence, its second token masked
    let (a, b) = (random_ids(&mut rng, v), random_ids(&mut rng, v));
    let single = batch(vec![vec![CLS, MASK, b, SEP]]);
    let masked = MaskedBatch {
        input: single.clone(),
        original: Array2::from_shape_vec((1, 4), vec![CLS, a, b, SEP]).expect("shape"),
        selected: Array2::from_shape_vec((1, 4), vec![0, 1, 0, 0]).expect("shape"),
    };
    let targets = Array2::from_shape_simple_fn((1, mtr_dim), || rng.sample::<f64, _>(StandardNormal));
    let triples = batch(
        (0..3 * gc.triples)
            .map(|_| vec![CLS, random_ids(&mut rng, v), random_ids(&mut rng, v), SEP])
            .collect(),
    );
    let probe = Array2::from_shape_simple_fn((4, d), || rng.random_range(-0.5..0.5));

    let mut sweep = Sweep { cfg: gc, out: Vec::new() };

    // encoder through the probe. Each layer is checked against the gradient
    // reaching its output, recomputed from the first part a tensor feeds;
    // the gradients passed between layers are checked separately.
    let fwd = forward(enc, &params.encoder, &single, mode)?;
    let mut grads = EncoderParams::zeros(enc);
    let upstream = backward_traced(enc, &params.encoder, &fwd, &probe, &mut grads);
    let inputs = layer_inputs(enc, &params.encoder, &single, mode)?;
    let top = enc.layers;
    let dot = |a: &Array2<f64>, b: &Array2<f64>| (a * b).sum();
    let base = dot(&inputs[0], &upstream[0]);
    let analytic: Vec<(String, Vec<f64>)> = grads.named_slices().into_iter().map(|(n, s)| (n, s.to_vec())).collect();
    for (ti, (name, g)) in analytic.iter().enumerate() {
        let site = site(enc, name);
        let values = params.encoder.named_slices()[ti].1.to_vec();
        let mut scratch = params.encoder.clone();
        sweep.run("encoder", name, g, &values, |k, x| {
            scratch.named_slices_mut()[ti].1[k] = x;
            let l = match site {
                Site::Embedding => embeddings(enc, &scratch, &single, mode).map(|x0| {
                    // an unchanged layer input gives an unchanged output
                    if x0 == inputs[0] {
                        base
                    } else {
                        dot(&x0, &upstream[0])
                    }
                }),
                Site::Layer(l, part) => {
                    layer_from(enc, &scratch, &fwd, &single, l, &inputs[l], part).map(|y| dot(&y, &upstream[l + 1]))
                }
                Site::Closing => forward_from(enc, &scratch, &single, mode, top, inputs[top].clone()).map(|h| dot(&h, &probe)),
            };
            scratch.named_slices_mut()[ti].1[k] = values[k];
            Ok(l?)
        })?;
    }
    for (l, (x, d)) in inputs.iter().zip(&upstream).enumerate() {
        let values = x.as_slice().expect("contiguous").to_vec();
        let mut x = x.clone();
        let name = format!("layers.{l}.input");
        sweep.run("chain", &name, d.as_slice().expect("contiguous"), &values, |k, v| {
            x.as_slice_mut().expect("contiguous")[k] = v;
            let out = if l < top {
                layer_from(enc, &params.encoder, &fwd, &single, l, &x, LayerPart::Input).map(|y| dot(&y, &upstream[l + 1]))
            } else {
                forward_from(enc, &params.encoder, &single, mode, top, x.clone()).map(|h| dot(&h, &probe))
            };
            x.as_slice_mut().expect("contiguous")[k] = values[k];
            Ok(out?)
        })?;
    }

    // objectives with respect to the hidden states, then their heads
    let tri_fwd = forward(enc, &params.encoder, &triples, mode)?;
    let k = gc.triples;
    check_hidden(&mut sweep, "mlm", &fwd, |f| Ok(mlm_head_loss(&params, f, &masked, false)?.0), || {
        Ok(mlm_head_loss(&params, &fwd, &masked, true)?.1.expect("grad").d_hidden)
    })?;
    check_hidden(&mut sweep, "mtr", &fwd, |f| Ok(mtr_head_loss(enc, &params, f, &targets, mode, false)?.0), || {
        Ok(mtr_head_loss(enc, &params, &fwd, &targets, mode, true)?.1.expect("grad").d_hidden)
    })?;
    for (label, variant) in [("cl", ClVariant::Standard), ("cl-literal", ClVariant::PaperLiteral)] {
        check_hidden(&mut sweep, label, &tri_fwd, |f| Ok(cl_head_loss(&params, f, k, variant, false)?.0), || {
            Ok(cl_head_loss(&params, &tri_fwd, k, variant, true)?.1.expect("grad").d_hidden)
        })?;
    }

    let head_grads = mlm_head_loss(&params, &fwd, &masked, true)?.1.expect("grad").grads;
    let mlm_analytic = head_grads.mlm.expect("mlm head");
    for (ti, (name, g)) in mlm_analytic.named_slices().into_iter().enumerate() {
        let mut p = params.clone();
        let values = params.mlm.as_ref().expect("mlm head").named_slices()[ti].1.to_vec();
        sweep.run("mlm", &name, g, &values, |k, x| {
            p.mlm.as_mut().expect("mlm head").named_slices_mut()[ti].1[k] = x;
            let l = mlm_head_loss(&p, &fwd, &masked, false);
            p.mlm.as_mut().expect("mlm head").named_slices_mut()[ti].1[k] = values[k];
            Ok(l?.0)
        })?;
    }
    let head_grads = mtr_head_loss(enc, &params, &fwd, &targets, mode, true)?.1.expect("grad").grads;
    let mtr_analytic = head_grads.mtr.expect("mtr head");
    for (ti, (name, g)) in mtr_analytic.named_slices().into_iter().enumerate() {
        let mut p = params.clone();
        let values = params.mtr.as_ref().expect("mtr head").named_slices()[ti].1.to_vec();
        sweep.run("mtr", &name, g, &values, |k, x| {
            p.mtr.as_mut().expect("mtr head").named_slices_mut()[ti].1[k] = x;
            let l = mtr_head_loss(enc, &p, &fwd, &targets, mode, false);
            p.mtr.as_mut().expect("mtr head").named_slices_mut()[ti].1[k] = values[k];
            Ok(l?.0)
        })?;
    }

    Ok(GradCheckReport {
        tensors: sweep.out,
        tolerance: gc.tolerance,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy)]
enum Site {
    /// Read while embedding.
    Embedding,
    Layer(usize, LayerPart),
    /// The closing norm after the last layer.
    Closing,
}

fn site(enc: &EncoderConfig, name: &str) -> Site {
    if let Some(rest) = name.strip_prefix("layers.") {
        let (i, field) = rest.split_once('.').expect("layer tensor name");
        let part = LayerPart::of(field, enc.ln_placement).expect("known layer tensor");
        return Site::Layer(i.parse().expect("layer index"), part);
    }
    match (name.starts_with("outer_ln."), enc.ln_placement) {
        (true, LnPlacement::Pre) => Site::Closing,
        _ => Site::Embedding,
    }
}

fn check_hidden<L, G>(sweep: &mut Sweep<'_>, scope: &str, fwd: &Forward<f64>, loss: L, grad: G) -> Result<(), ObjectiveError>
where
    L: Fn(&Forward<f64>) -> Result<f64, ObjectiveError>,
    G: FnOnce() -> Result<Array2<f64>, ObjectiveError>,
{
    let analytic = grad()?;
    let values = fwd.hidden.as_slice().expect("contiguous").to_vec();
    let mut scratch = fwd.clone();
    sweep.run(scope, "hidden", analytic.as_slice().expect("contiguous"), &values, |k, x| {
        scratch.hidden.as_slice_mut().expect("contiguous")[k] = x;
        let l = loss(&scratch);
        scratch.hidden.as_slice_mut().expect("contiguous")[k] = values[k];
        l
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_model_passes() {
        for ln_placement in [LnPlacement::Pre, LnPlacement::Post] {
            let cfg = EncoderConfig {
                layers: 2,
                heads: 2,
                hidden_dim: 8,
                ff_dim: 12,
                max_len: 8,
                vocab_size: 12,
                ln_placement,
                ..EncoderConfig::desk()
            };
            let report = gradient_check(&cfg, 3, &GradCheckConfig::default()).unwrap();
            assert!(report.passed(), "{:?}", report.failures());
            assert_eq!(
                report.tensors.iter().filter(|t| t.scope == "encoder").map(|t| t.entries).sum::<usize>(),
                cfg.encoder_parameter_count()
            );
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let gc = GradCheckConfig::default();
        let mut sweep = Sweep { cfg: &gc, out: Vec::new() };
        let x = [1.0, 2.0];
        sweep
            .run("t", "square", &[2.0, 5.0], &x, |k, v| {
                let mut y = x;
                y[k] = v;
                Ok(y[0] * y[0] + y[1] * y[1])
            })
            .unwrap();
        assert!(sweep.out[0].max_rel > 0.1 && sweep.out[0].worst == 1);
    }
}
