//! Transformer scorer: a source encoder, a syntax-context encoder, and a
//! decoder whose layers attend to its own prefix, the source, and the
//! syntax context in turn.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::autodiff::{Tape, Var};
use super::{infilling_ids, EncodedContext, EncodedSource, ModelError, ModelKind, ScoreModel};
use crate::tree::SyntaxContext;
use crate::triplet::{Triplet, TripletSet, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralConfig {
    pub width: usize,
    pub ffn_width: usize,
    pub heads: usize,
    pub src_layers: usize,
    pub syn_layers: usize,
    pub dec_layers: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Peak learning rate, reached at the end of warmup.
    pub lr: f64,
    pub warmup: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of records held out for model selection (0 disables it).
    pub heldout_fraction: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            width: 64,
            ffn_width: 128,
            heads: 4,
            src_layers: 2,
            syn_layers: 2,
            dec_layers: 2,
            dropout: 0.1,
            label_smoothing: 0.1,
            lr: 3e-3,
            warmup: 200,
            steps: 2000,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            heldout_fraction: 0.05,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl NeuralConfig {
    /// Width 8, one head, one layer per stack, no dropout or smoothing.
    pub fn tiny() -> Self {
        NeuralConfig {
            width: 8,
            ffn_width: 16,
            heads: 1,
            src_layers: 1,
            syn_layers: 1,
            dec_layers: 1,
            dropout: 0.0,
            label_smoothing: 0.0,
            ..NeuralConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.width == 0 || self.ffn_width == 0 || self.heads == 0 {
            return bad("width, ffn_width and heads must be at least 1".into());
        }
        if self.width % self.heads != 0 {
            return bad(format!("width {} not divisible by {} heads", self.width, self.heads));
        }
        if self.src_layers == 0 || self.syn_layers == 0 || self.dec_layers == 0 {
            return bad("every stack needs at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !(self.lr >= 0.0) || self.batch_size == 0 || self.eval_every == 0 {
            return bad("lr must be ≥ 0 and batch_size, eval_every ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad(format!("heldout_fraction {} outside [0, 1)", self.heldout_fraction));
        }
        Ok(())
    }

    /// Warmup then inverse-square-root decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup.max(1) as f64;
        self.lr * (s / w).min((w / s).sqrt())
    }
}

struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

struct Norm {
    g: usize,
    b: usize,
}

struct EncLayer {
    ln_attn: Norm,
    attn: Attn,
    ln_ffn: Norm,
    ffn: Ffn,
}

struct DecLayer {
    ln_self: Norm,
    self_attn: Attn,
    ln_src: Norm,
    src_attn: Attn,
    ln_syn: Norm,
    syn_attn: Attn,
    ln_ffn: Norm,
    ffn: Ffn,
}

/// Parameter indices; the order of construction is the storage order.
struct Layout {
    emb: usize,
    src: Vec<EncLayer>,
    src_ln: Norm,
    syn: Vec<EncLayer>,
    syn_ln: Norm,
    dec: Vec<DecLayer>,
    dec_ln: Norm,
}

enum Init {
    Embedding,
    Xavier,
    Zeros,
    Ones,
}

struct Builder {
    shapes: Vec<(String, (usize, usize), Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.shapes.push((name, shape, init));
        self.shapes.len() - 1
    }

    fn norm(&mut self, prefix: &str, w: usize) -> Norm {
        Norm {
            g: self.add(format!("{prefix}.g"), (1, w), Init::Ones),
            b: self.add(format!("{prefix}.b"), (1, w), Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, w: usize) -> Attn {
        let mut lin = |n: &str| {
            (
                self.add(format!("{prefix}.w{n}"), (w, w), Init::Xavier),
                self.add(format!("{prefix}.b{n}"), (1, w), Init::Zeros),
            )
        };
        let (wq, bq) = lin("q");
        let (wk, bk) = lin("k");
        let (wv, bv) = lin("v");
        let (wo, bo) = lin("o");
        Attn {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ffn(&mut self, prefix: &str, w: usize, f: usize) -> Ffn {
        Ffn {
            w1: self.add(format!("{prefix}.w1"), (w, f), Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), (1, f), Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), (f, w), Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), (1, w), Init::Zeros),
        }
    }

    fn encoder(&mut self, prefix: &str, layers: usize, w: usize, f: usize) -> Vec<EncLayer> {
        (0..layers)
            .map(|i| EncLayer {
                ln_attn: self.norm(&format!("{prefix}.{i}.ln_attn"), w),
                attn: self.attn(&format!("{prefix}.{i}.attn"), w),
                ln_ffn: self.norm(&format!("{prefix}.{i}.ln_ffn"), w),
                ffn: self.ffn(&format!("{prefix}.{i}.ffn"), w, f),
            })
            .collect()
    }
}

fn layout(vocab: usize, c: &NeuralConfig) -> (Layout, Vec<(String, (usize, usize), Init)>) {
    let (w, f) = (c.width, c.ffn_width);
    let mut b = Builder { shapes: Vec::new() };
    let emb = b.add("embedding".into(), (vocab, w), Init::Embedding);
    let src = b.encoder("src", c.src_layers, w, f);
    let src_ln = b.norm("src.ln", w);
    let syn = b.encoder("syn", c.syn_layers, w, f);
    let syn_ln = b.norm("syn.ln", w);
    let dec = (0..c.dec_layers)
        .map(|i| DecLayer {
            ln_self: b.norm(&format!("dec.{i}.ln_self"), w),
            self_attn: b.attn(&format!("dec.{i}.self_attn"), w),
            ln_src: b.norm(&format!("dec.{i}.ln_src"), w),
            src_attn: b.attn(&format!("dec.{i}.src_attn"), w),
            ln_syn: b.norm(&format!("dec.{i}.ln_syn"), w),
            syn_attn: b.attn(&format!("dec.{i}.syn_attn"), w),
            ln_ffn: b.norm(&format!("dec.{i}.ln_ffn"), w),
            ffn: b.ffn(&format!("dec.{i}.ffn"), w, f),
        })
        .collect();
    let dec_ln = b.norm("dec.ln", w);
    (
        Layout {
            emb,
            src,
            src_ln,
            syn,
            syn_ln,
            dec,
            dec_ln,
        },
        b.shapes,
    )
}

fn positions(len: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, w), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((i - i % 2) as f64 / w as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn causal_mask(len: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, len), |(i, j)| if j > i { f64::NEG_INFINITY } else { 0.0 })
}

/// Per-forward switches.
#[derive(Clone, Copy)]
struct Mode<'r> {
    dropout: f64,
    rng: Option<&'r std::cell::RefCell<ChaCha8Rng>>,
    causal: bool,
}

impl Mode<'_> {
    const EVAL: Mode<'static> = Mode {
        dropout: 0.0,
        rng: None,
        causal: true,
    };
}

/// The trained (or freshly initialized) transformer scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub(crate) vocab: Vocab,
    pub(crate) config: NeuralConfig,
    pub(crate) params: Vec<Array2<f64>>,
}

/// Deterministic initialization from `config.seed`.
pub fn init_neural(vocab: Vocab, config: NeuralConfig) -> Result<NeuralModel, ModelError> {
    config.validate()?;
    let (_, shapes) = layout(vocab.len(), &config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = shapes
        .iter()
        .map(|(_, (r, c), init)| match init {
            Init::Zeros => Array2::zeros((*r, *c)),
            Init::Ones => Array2::ones((*r, *c)),
            Init::Xavier => {
                let a = (6.0 / (r + c) as f64).sqrt();
                Array2::from_shape_fn((*r, *c), |_| rng.gen_range(-a..a))
            }
            Init::Embedding => {
                let a = (3.0 / *c as f64).sqrt();
                Array2::from_shape_fn((*r, *c), |_| rng.gen_range(-a..a))
            }
        })
        .collect();
    Ok(NeuralModel { vocab, config, params })
}

impl NeuralModel {
    /// Rebuilds a model from stored parameters, checking their shapes.
    pub fn from_parts(vocab: Vocab, config: NeuralConfig, params: Vec<Array2<f64>>) -> Result<Self, ModelError> {
        config.validate()?;
        let (_, shapes) = layout(vocab.len(), &config);
        if shapes.len() != params.len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in shapes.iter().zip(&params) {
            if p.dim() != *shape {
                return Err(ModelError::Format(format!("{name}: shape {:?}, expected {shape:?}", p.dim())));
            }
        }
        Ok(NeuralModel { vocab, config, params })
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.config
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        layout(self.vocab.len(), &self.config).1.into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    fn layout(&self) -> Layout {
        layout(self.vocab.len(), &self.config).0
    }

    fn lookup(&self, surface: &str) -> usize {
        self.vocab.id(surface).unwrap_or(self.vocab.unk()) as usize
    }

    fn source_ids(&self, source: &[String]) -> Vec<usize> {
        if source.is_empty() {
            return vec![self.vocab.eos() as usize];
        }
        source.iter().map(|t| self.lookup(t)).collect()
    }

    fn context_ids(&self, context: &SyntaxContext) -> Vec<usize> {
        context.surfaces().iter().map(|s| self.lookup(s)).collect()
    }

    /// Full-sequence log-probabilities (one row per target position) for the
    /// decoder input `[<s>] ++ prefix`.
    pub fn forward_logprobs(&self, source: &[String], context: &SyntaxContext, prefix: &[u32]) -> Array2<f64> {
        let src = self.encode_source(source);
        let enc = self.encode_context(&src, context).expect("same kind");
        let EncodedContext::Neural { source, context } = enc else {
            unreachable!()
        };
        let mut t = Tape::new(&self.params);
        let lay = self.layout();
        let s = t.constant((*source).clone());
        let c = t.constant(context);
        let logits = self.decode(&mut t, &lay, s, c, &self.decoder_input(prefix), Mode::EVAL);
        log_softmax_rows(t.val(logits))
    }

    fn decoder_input(&self, prefix: &[u32]) -> Vec<usize> {
        std::iter::once(self.vocab.bos() as usize)
            .chain(prefix.iter().map(|&i| i as usize))
            .collect()
    }

    fn dropout(&self, t: &mut Tape, x: Var, mode: Mode) -> Var {
        let Some(rng) = mode.rng.filter(|_| mode.dropout > 0.0) else {
            return x;
        };
        let keep = 1.0 - mode.dropout;
        let mut rng = rng.borrow_mut();
        let dim = t.val(x).raw_dim();
        let m = Array2::from_shape_fn(dim, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        t.mul_const(x, m)
    }

    fn embed(&self, t: &mut Tape, lay: &Layout, ids: &[usize], mode: Mode) -> Var {
        let w = self.config.width;
        let e = t.gather(t.param(lay.emb), ids);
        let e = t.scale(e, (w as f64).sqrt());
        let p = t.constant(positions(ids.len(), w));
        let x = t.add(e, p);
        self.dropout(t, x, mode)
    }

    fn norm(&self, t: &mut Tape, n: &Norm, x: Var) -> Var {
        t.layer_norm(x, t.param(n.g), t.param(n.b))
    }

    fn linear(&self, t: &mut Tape, x: Var, w: usize, b: usize) -> Var {
        let y = t.matmul(x, t.param(w));
        t.add_row(y, t.param(b))
    }

    fn attention(&self, t: &mut Tape, a: &Attn, q_in: Var, kv_in: Var, mask: Option<&Array2<f64>>) -> Var {
        let h = self.config.heads;
        let dh = self.config.width / h;
        let q = self.linear(t, q_in, a.wq, a.bq);
        let k = self.linear(t, kv_in, a.wk, a.bk);
        let v = self.linear(t, kv_in, a.wv, a.bv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let (lo, hi) = (i * dh, (i + 1) * dh);
            let (qh, kh, vh) = if h == 1 {
                (q, k, v)
            } else {
                (t.slice_cols(q, lo, hi), t.slice_cols(k, lo, hi), t.slice_cols(v, lo, hi))
            };
            let sc = t.matmul_t(qh, kh);
            let sc = t.scale(sc, scale);
            let p = t.softmax(sc, mask);
            heads.push(t.matmul(p, vh));
        }
        let cat = if h == 1 { heads[0] } else { t.concat_cols(&heads) };
        self.linear(t, cat, a.wo, a.bo)
    }

    fn ffn(&self, t: &mut Tape, f: &Ffn, x: Var) -> Var {
        let y = self.linear(t, x, f.w1, f.b1);
        let y = t.relu(y);
        self.linear(t, y, f.w2, f.b2)
    }

    fn residual(&self, t: &mut Tape, x: Var, y: Var, mode: Mode) -> Var {
        let y = self.dropout(t, y, mode);
        t.add(x, y)
    }

    fn encode(&self, t: &mut Tape, layers: &[EncLayer], final_ln: &Norm, x: Var, mode: Mode) -> Var {
        let mut x = x;
        for l in layers {
            let n = self.norm(t, &l.ln_attn, x);
            let a = self.attention(t, &l.attn, n, n, None);
            x = self.residual(t, x, a, mode);
            let n = self.norm(t, &l.ln_ffn, x);
            let f = self.ffn(t, &l.ffn, n);
            x = self.residual(t, x, f, mode);
        }
        self.norm(t, final_ln, x)
    }

    fn encode_src_var(&self, t: &mut Tape, lay: &Layout, source: &[String], mode: Mode) -> Var {
        let x = self.embed(t, lay, &self.source_ids(source), mode);
        self.encode(t, &lay.src, &lay.src_ln, x, mode)
    }

    fn encode_syn_var(&self, t: &mut Tape, lay: &Layout, context: &SyntaxContext, mode: Mode) -> Var {
        let x = self.embed(t, lay, &self.context_ids(context), mode);
        self.encode(t, &lay.syn, &lay.syn_ln, x, mode)
    }

    /// Output logits, one row per decoder input position.
    fn decode(&self, t: &mut Tape, lay: &Layout, src: Var, syn: Var, input: &[usize], mode: Mode) -> Var {
        let mask = mode.causal.then(|| causal_mask(input.len()));
        let mut x = self.embed(t, lay, input, mode);
        for l in &lay.dec {
            let n = self.norm(t, &l.ln_self, x);
            let a = self.attention(t, &l.self_attn, n, n, mask.as_ref());
            x = self.residual(t, x, a, mode);
            let n = self.norm(t, &l.ln_src, x);
            let a = self.attention(t, &l.src_attn, n, src, None);
            x = self.residual(t, x, a, mode);
            let n = self.norm(t, &l.ln_syn, x);
            let a = self.attention(t, &l.syn_attn, n, syn, None);
            x = self.residual(t, x, a, mode);
            let n = self.norm(t, &l.ln_ffn, x);
            let f = self.ffn(t, &l.ffn, n);
            x = self.residual(t, x, f, mode);
        }
        let h = self.norm(t, &lay.dec_ln, x);
        t.matmul_t(h, t.param(lay.emb))
    }

    /// Summed token loss and its gradient for one triplet.
    fn triplet_loss(&self, triplet: &Triplet, smoothing: f64, mode: Mode, grads: bool) -> Result<(f64, Option<Vec<Array2<f64>>>), ModelError> {
        let target = infilling_ids(&self.vocab, &triplet.infilling)?;
        let input = self.decoder_input(&target[..target.len() - 1]);
        let lay = self.layout();
        let mut t = Tape::new(&self.params);
        let src = self.encode_src_var(&mut t, &lay, &triplet.source, mode);
        let syn = self.encode_syn_var(&mut t, &lay, &triplet.context, mode);
        let logits = self.decode(&mut t, &lay, src, syn, &input, mode);
        let targets: Vec<usize> = target.iter().map(|&i| i as usize).collect();
        let loss = t.cross_entropy(logits, &targets, smoothing);
        let value = t.val(loss)[[0, 0]];
        Ok((value, grads.then(|| t.backward(loss))))
    }
}

fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl ScoreModel for NeuralModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Neural
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn encode_source(&self, source: &[String]) -> EncodedSource {
        let lay = self.layout();
        let mut t = Tape::new(&self.params);
        let h = self.encode_src_var(&mut t, &lay, source, Mode::EVAL);
        EncodedSource::Neural(Arc::new(t.val(h).clone()))
    }

    fn encode_context(&self, source: &EncodedSource, context: &SyntaxContext) -> Result<EncodedContext, ModelError> {
        let EncodedSource::Neural(src) = source else {
            return Err(ModelError::KindMismatch);
        };
        let lay = self.layout();
        let mut t = Tape::new(&self.params);
        let h = self.encode_syn_var(&mut t, &lay, context, Mode::EVAL);
        Ok(EncodedContext::Neural {
            source: Arc::clone(src),
            context: t.val(h).clone(),
        })
    }

    fn next_logprobs_encoded(&self, context: &EncodedContext, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let EncodedContext::Neural { source, context } = context else {
            return Err(ModelError::KindMismatch);
        };
        let lay = self.layout();
        let mut t = Tape::new(&self.params);
        let s = t.constant((**source).clone());
        let c = t.constant(context.clone());
        let logits = self.decode(&mut t, &lay, s, c, &self.decoder_input(prefix), Mode::EVAL);
        let last = t.val(logits).row(prefix.len()).to_owned().insert_axis(ndarray::Axis(0));
        Ok(log_softmax_rows(&last).into_iter().collect())
    }
}

/// Mean loss over a batch and the matching mean gradient.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Vec<Array2<f64>>,
}

/// Mean per-triplet cross-entropy (summed over tokens, with the configured
/// label smoothing and no dropout) and its gradient.
pub fn ce_loss(model: &NeuralModel, batch: &[Triplet]) -> Result<LossAndGrad, ModelError> {
    batch_loss(model, batch, model.config.label_smoothing, None)
}

/// Per-triplet gradients are computed in parallel and summed in batch order.
fn batch_loss(model: &NeuralModel, batch: &[Triplet], smoothing: f64, dropout_seed: Option<u64>) -> Result<LossAndGrad, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let parts: Vec<(f64, Vec<Array2<f64>>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, tr)| {
            let rng = dropout_seed.map(|s| std::cell::RefCell::new(ChaCha8Rng::seed_from_u64(s ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))));
            let mode = Mode {
                dropout: if rng.is_some() { model.config.dropout } else { 0.0 },
                rng: rng.as_ref(),
                causal: true,
            };
            let (l, g) = model.triplet_loss(tr, smoothing, mode, true)?;
            Ok((l, g.expect("requested")))
        })
        .collect::<Result<_, ModelError>>()?;
    let n = batch.len() as f64;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().expect("nonempty");
    for (l, g) in iter {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for g in &mut grads {
        *g /= n;
    }
    Ok(LossAndGrad { loss: loss / n, grads })
}

/// Mean loss without gradients or dropout.
pub fn eval_loss(model: &NeuralModel, triplets: &[Triplet], smoothing: f64) -> Result<f64, ModelError> {
    if triplets.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let losses: Vec<f64> = triplets
        .par_iter()
        .map(|tr| model.triplet_loss(tr, smoothing, Mode::EVAL, false).map(|(l, _)| l))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / triplets.len() as f64)
}

/// Denominator floor for the relative error. Finite differences of an f64
/// loss carry roundoff near ε·|loss|/h ≈ 1e-11 at h = 1e-4, so coordinates
/// whose true gradient is zero (e.g. key biases, which softmax ignores) would
/// otherwise report spurious relative errors.
pub const REL_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    pub coords: usize,
    pub seed: u64,
    /// Mutation: finite differences use a decoder without the causal mask
    /// while the analytic gradient keeps it.
    pub break_mask: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            coords: 200,
            seed: 0,
            break_mask: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coords: usize,
    /// (parameter name, row, column, analytic, numeric) at the worst coordinate.
    pub worst: Option<(String, usize, usize, f64, f64)>,
}

/// Analytic gradient vs central differences on a random coordinate sample,
/// dropout off, label smoothing as configured.
pub fn grad_check(model: &NeuralModel, triplet: &Triplet, h: f64) -> Result<GradCheck, ModelError> {
    grad_check_with(model, triplet, &GradCheckOptions { h, ..GradCheckOptions::default() })
}

pub fn grad_check_with(model: &NeuralModel, triplet: &Triplet, opts: &GradCheckOptions) -> Result<GradCheck, ModelError> {
    let smoothing = model.config.label_smoothing;
    let (_, grads) = model.triplet_loss(triplet, smoothing, Mode::EVAL, true)?;
    let grads = grads.expect("requested");
    let names = model.param_names();
    let numeric_mode = Mode {
        causal: !opts.break_mask,
        ..Mode::EVAL
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = model.clone();
    let mut worst: Option<(String, usize, usize, f64, f64)> = None;
    let mut max_rel = 0.0f64;
    for _ in 0..opts.coords {
        let p = rng.gen_range(0..probe.params.len());
        let (rows, cols) = probe.params[p].dim();
        let (r, c) = (rng.gen_range(0..rows), rng.gen_range(0..cols));
        let orig = probe.params[p][[r, c]];
        probe.params[p][[r, c]] = orig + opts.h;
        let plus = probe.triplet_loss(triplet, smoothing, numeric_mode, false)?.0;
        probe.params[p][[r, c]] = orig - opts.h;
        let minus = probe.triplet_loss(triplet, smoothing, numeric_mode, false)?.0;
        probe.params[p][[r, c]] = orig;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let analytic = grads[p][[r, c]];
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR);
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some((names[p].clone(), r, c, analytic, numeric));
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        coords: opts.coords,
        worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    /// Step whose parameters were returned.
    pub best_step: usize,
    pub best_heldout: Option<f64>,
}

impl TrainLog {
    /// `step=… lr=… loss=… heldout=…` lines.
    pub fn lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| {
                let mut s = format!("step={} lr={:.6e} loss={:.6}", e.step, e.lr, e.loss);
                if let Some(h) = e.heldout {
                    s.push_str(&format!(" heldout={h:.6}"));
                }
                s
            })
            .collect()
    }
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64, c: &NeuralConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.adam_eps);
            });
        }
    }
}

/// Adam with warmup and inverse-square-root decay over seeded shuffled
/// minibatches. With a held-out split, the parameters with the lowest
/// held-out loss are returned; otherwise the final ones.
pub fn train_neural(triplets: &TripletSet, vocab: Vocab, config: NeuralConfig) -> Result<(NeuralModel, TrainLog), ModelError> {
    train_neural_from(init_neural(vocab, config)?, triplets)
}

/// Continues training an existing model with its own configuration.
pub fn train_neural_from(mut model: NeuralModel, triplets: &TripletSet) -> Result<(NeuralModel, TrainLog), ModelError> {
    if triplets.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let config = model.config.clone();
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);

    let mut records: Vec<usize> = triplets.records.clone();
    records.sort_unstable();
    records.dedup();
    records.shuffle(&mut rng);
    let n_held = ((records.len() as f64 * config.heldout_fraction).round() as usize).min(records.len() - 1);
    let held: std::collections::HashSet<usize> = records[..n_held].iter().copied().collect();
    let (mut train, mut heldout): (Vec<Triplet>, Vec<Triplet>) = (Vec::new(), Vec::new());
    for (t, r) in triplets.triplets.iter().zip(&triplets.records) {
        if held.contains(r) {
            heldout.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }

    let mut adam = Adam::new(&model.params);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<Array2<f64>>)> = None;
    let mut order: Vec<usize> = Vec::new();
    let mut pos = 0;
    let mut window = Vec::new();
    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(train.len()) {
            if pos == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
                pos = 0;
            }
            batch.push(train[order[pos]].clone());
            pos += 1;
        }
        let dropout_seed = rng.gen::<u64>();
        let lg = batch_loss(&model, &batch, config.label_smoothing, Some(dropout_seed))?;
        if !lg.loss.is_finite() {
            return Err(ModelError::Diverged(step));
        }
        let lr = config.lr_at(step);
        adam.update(&mut model.params, &lg.grads, lr, &config);
        window.push(lg.loss);
        if step % config.eval_every == 0 || step == config.steps {
            let loss = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            let held_loss = if heldout.is_empty() {
                None
            } else {
                let h = eval_loss(&model, &heldout, config.label_smoothing)?;
                if !h.is_finite() {
                    return Err(ModelError::Diverged(step));
                }
                Some(h)
            };
            if let Some(h) = held_loss {
                if best.as_ref().is_none_or(|(b, _)| h < *b) {
                    best = Some((h, model.params.clone()));
                    log.best_step = step;
                    log.best_heldout = Some(h);
                }
            }
            log.entries.push(LogEntry {
                step,
                lr,
                loss,
                heldout: held_loss,
            });
        }
    }
    match best {
        Some((_, params)) => model.params = params,
        None => log.best_step = config.steps,
    }
    Ok((model, log))
}
