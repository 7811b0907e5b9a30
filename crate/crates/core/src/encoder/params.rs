use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EncoderConfig, Real};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_g: Array1<F>,
    pub ln1_b: Array1<F>,
    pub wq: Array2<F>,
    pub bq: Array1<F>,
    pub wk: Array2<F>,
    pub bk: Array1<F>,
    pub wv: Array2<F>,
    pub bv: Array1<F>,
    pub wo: Array2<F>,
    pub bo: Array1<F>,
    pub ln2_g: Array1<F>,
    pub ln2_b: Array1<F>,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

/// Encoder body. `outer_ln` is the final layer norm with pre-LN placement
/// and the embedding layer norm with post-LN placement.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    pub tok_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub outer_ln_g: Array1<F>,
    pub outer_ln_b: Array1<F>,
}

/// Linear token classifier, hidden -> vocab.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

/// hidden -> hidden, ReLU, dropout -> descriptor width.
#[derive(Debug, Clone, PartialEq)]
pub struct MtrHead<F> {
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
}

/// Encoder plus whichever task heads have been attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub encoder: EncoderParams<F>,
    pub mlm: Option<MlmHead<F>>,
    pub mtr: Option<MtrHead<F>>,
}

fn sl<F>(a: &ndarray::ArrayBase<impl ndarray::Data<Elem = F>, impl ndarray::Dimension>) -> &[F] {
    a.as_slice().expect("parameters are contiguous")
}

macro_rules! collect_fields {
    ($self:ident, $out:ident, $prefix:expr, $($field:ident => $name:literal),* $(,)?) => {
        $( $out.push((format!("{}{}", $prefix, $name), $self.$field.as_slice().expect("contiguous"))); )*
    };
}

macro_rules! collect_fields_mut {
    ($self:ident, $out:ident, $prefix:expr, $($field:ident => $name:literal),* $(,)?) => {
        $( $out.push((format!("{}{}", $prefix, $name), $self.$field.as_slice_mut().expect("contiguous"))); )*
    };
}

macro_rules! layer_fields {
    ($m:ident, $self:ident, $out:ident, $prefix:expr) => {
        $m!($self, $out, $prefix,
            ln1_g => "ln1.gain", ln1_b => "ln1.bias",
            wq => "attn.wq", bq => "attn.bq", wk => "attn.wk", bk => "attn.bk",
            wv => "attn.wv", bv => "attn.bv", wo => "attn.wo", bo => "attn.bo",
            ln2_g => "ln2.gain", ln2_b => "ln2.bias",
            w1 => "ffn.w1", b1 => "ffn.b1", w2 => "ffn.w2", b2 => "ffn.b2")
    };
}

impl<F: Real> LayerParams<F> {
    fn zeros(d: usize, f: usize) -> Self {
        let z1 = |n| Array1::zeros(n);
        let z2 = |r, c| Array2::zeros((r, c));
        LayerParams {
            ln1_g: z1(d),
            ln1_b: z1(d),
            wq: z2(d, d),
            bq: z1(d),
            wk: z2(d, d),
            bk: z1(d),
            wv: z2(d, d),
            bv: z1(d),
            wo: z2(d, d),
            bo: z1(d),
            ln2_g: z1(d),
            ln2_b: z1(d),
            w1: z2(d, f),
            b1: z1(f),
            w2: z2(f, d),
            b2: z1(d),
        }
    }
}

impl<F: Real> EncoderParams<F> {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let d = cfg.hidden_dim;
        EncoderParams {
            tok_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_len, d)),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(d, cfg.ff_dim)).collect(),
            outer_ln_g: Array1::zeros(d),
            outer_ln_b: Array1::zeros(d),
        }
    }

    /// Truncated normal weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: &EncoderConfig) -> Self {
        let mut p = Self::zeros(cfg);
        init_named(&mut p.named_slices_mut(), cfg.seed, cfg.init_std);
        p
    }

    pub fn named_slices(&self) -> Vec<(String, &[F])> {
        let mut out = vec![
            ("embeddings.token".to_string(), sl(&self.tok_emb)),
            ("embeddings.position".to_string(), sl(&self.pos_emb)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            layer_fields!(collect_fields, l, out, format!("layers.{i}."));
        }
        out.push(("outer_ln.gain".into(), sl(&self.outer_ln_g)));
        out.push(("outer_ln.bias".into(), sl(&self.outer_ln_b)));
        out
    }

    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out: Vec<(String, &mut [F])> = vec![
            ("embeddings.token".to_string(), self.tok_emb.as_slice_mut().unwrap()),
            ("embeddings.position".to_string(), self.pos_emb.as_slice_mut().unwrap()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            layer_fields!(collect_fields_mut, l, out, format!("layers.{i}."));
        }
        out.push(("outer_ln.gain".into(), self.outer_ln_g.as_slice_mut().unwrap()));
        out.push(("outer_ln.bias".into(), self.outer_ln_b.as_slice_mut().unwrap()));
        out
    }
}

impl<F: Real> MlmHead<F> {
    pub fn zeros(d: usize, vocab: usize) -> Self {
        MlmHead {
            w: Array2::zeros((d, vocab)),
            b: Array1::zeros(vocab),
        }
    }

    pub fn init(d: usize, vocab: usize, seed: u64, std: f64) -> Self {
        let mut h = Self::zeros(d, vocab);
        init_named(&mut h.named_slices_mut(), seed, std);
        h
    }

    pub fn named_slices(&self) -> Vec<(String, &[F])> {
        let mut out = Vec::new();
        collect_fields!(self, out, "mlm.", w => "w", b => "b");
        out
    }

    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out = Vec::new();
        collect_fields_mut!(self, out, "mlm.", w => "w", b => "b");
        out
    }
}

impl<F: Real> MtrHead<F> {
    pub fn zeros(d: usize, out_dim: usize) -> Self {
        MtrHead {
            w1: Array2::zeros((d, d)),
            b1: Array1::zeros(d),
            w2: Array2::zeros((d, out_dim)),
            b2: Array1::zeros(out_dim),
        }
    }

    pub fn init(d: usize, out_dim: usize, seed: u64, std: f64) -> Self {
        let mut h = Self::zeros(d, out_dim);
        init_named(&mut h.named_slices_mut(), seed, std);
        h
    }

    pub fn out_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn named_slices(&self) -> Vec<(String, &[F])> {
        let mut out = Vec::new();
        collect_fields!(self, out, "mtr.", w1 => "w1", b1 => "b1", w2 => "w2", b2 => "b2");
        out
    }

    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out = Vec::new();
        collect_fields_mut!(self, out, "mtr.", w1 => "w1", b1 => "b1", w2 => "w2", b2 => "b2");
        out
    }
}

impl<F: Real> Params<F> {
    pub fn new(encoder: EncoderParams<F>) -> Self {
        Params {
            encoder,
            mlm: None,
            mtr: None,
        }
    }

    pub fn named_slices(&self) -> Vec<(String, &[F])> {
        let mut out = self.encoder.named_slices();
        if let Some(h) = &self.mlm {
            out.extend(h.named_slices());
        }
        if let Some(h) = &self.mtr {
            out.extend(h.named_slices());
        }
        out
    }

    pub fn named_slices_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out = self.encoder.named_slices_mut();
        if let Some(h) = &mut self.mlm {
            out.extend(h.named_slices_mut());
        }
        if let Some(h) = &mut self.mtr {
            out.extend(h.named_slices_mut());
        }
        out
    }

    /// Same structure, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, s) in z.named_slices_mut() {
            s.fill(F::zero());
        }
        z
    }

    /// Element-wise conversion to another float type.
    pub fn cast<G: Real>(&self) -> Params<G> {
        let e = &self.encoder;
        let cfg_like = EncoderConfig {
            layers: e.layers.len(),
            hidden_dim: e.tok_emb.ncols(),
            ff_dim: e.layers.first().map_or(1, |l| l.w1.ncols()),
            max_len: e.pos_emb.nrows(),
            vocab_size: e.tok_emb.nrows(),
            ..EncoderConfig::desk()
        };
        let d = cfg_like.hidden_dim;
        let mut out = Params {
            encoder: EncoderParams::<G>::zeros(&cfg_like),
            mlm: self.mlm.as_ref().map(|h| MlmHead::zeros(d, h.w.ncols())),
            mtr: self.mtr.as_ref().map(|h| MtrHead::zeros(d, h.out_dim())),
        };
        for ((_, dst), (_, src)) in out.named_slices_mut().into_iter().zip(self.named_slices()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a = G::of(b.to_f64().expect("finite"));
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_slices().iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Euclidean distance over all shared tensors.
    pub fn l2_distance(&self, other: &Params<F>) -> f64 {
        let mut acc = 0.0;
        for ((_, a), (_, b)) in self.named_slices().into_iter().zip(other.named_slices()) {
            for (x, y) in a.iter().zip(b) {
                let d = (*x - *y).to_f64().unwrap();
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

fn is_weight(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    name.starts_with("embeddings.") || last.starts_with('w')
}

/// Each tensor draws from its own stream keyed by name, so adding a head
/// never changes the encoder's initialization.
fn init_named<F: Real>(tensors: &mut [(String, &mut [F])], seed: u64, std: f64) {
    for (name, data) in tensors.iter_mut() {
        if name.ends_with("gain") {
            data.fill(F::one());
        } else if is_weight(name) {
            let mut rng = seed::rng(seed, &format!("init/{name}"), 0);
            for v in data.iter_mut() {
                *v = F::of(std * truncated_normal(&mut rng));
            }
        } else {
            data.fill(F::zero());
        }
    }
}

/// Standard normal resampled until it falls within two standard deviations.
fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_conventions() {
        let cfg = EncoderConfig {
            hidden_dim: 16,
            ff_dim: 32,
            heads: 2,
            vocab_size: 40,
            max_len: 12,
            ..EncoderConfig::desk()
        };
        let p = EncoderParams::<f64>::init(&cfg);
        assert!(p.layers[0].ln1_g.iter().all(|&g| g == 1.0));
        assert!(p.layers[1].b1.iter().all(|&b| b == 0.0));
        assert!(p.tok_emb.iter().all(|&w| w.abs() <= 0.04));
        let mean_sq = p.layers[0].w1.iter().map(|w| w * w).sum::<f64>() / p.layers[0].w1.len() as f64;
        assert!((mean_sq.sqrt() - 0.02 * 0.88).abs() < 0.003, "{}", mean_sq.sqrt());
        assert_eq!(p, EncoderParams::<f64>::init(&cfg));
    }

    #[test]
    fn cast_round_trip() {
        let cfg = EncoderConfig {
            hidden_dim: 8,
            ff_dim: 8,
            heads: 2,
            vocab_size: 20,
            max_len: 6,
            ..EncoderConfig::desk()
        };
        let mut p = Params::new(EncoderParams::<f32>::init(&cfg));
        p.mlm = Some(MlmHead::init(8, 20, 1, 0.02));
        p.mtr = Some(MtrHead::init(8, 3, 1, 0.02));
        let back: Params<f32> = p.cast::<f64>().cast();
        assert_eq!(back, p);
        assert_eq!(p.l2_distance(&back), 0.0);
        let names: Vec<String> = p.named_slices().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"layers.1.ffn.w2".to_string()));
        assert!(names.contains(&"mtr.b2".to_string()));
    }
}
