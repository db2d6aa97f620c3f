//! Character-level encoder-decoder transformer.
//!
//! Post-norm layers (`LayerNorm(x + Dropout(Sublayer(x)))`), ReLU
//! feed-forward blocks, sinusoidal positions added to embeddings scaled by
//! `sqrt(embedding_dim)`, and an untied output projection. Attention width is
//! the total across heads, so the default 32 wide, 2 head model uses 16
//! dimensions per head.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::PAD;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Added to attention scores at masked positions. Large enough that the
/// softmax weight underflows to exactly zero in both precisions.
const MASKED: f64 = -1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} outside vocabulary of {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("source batch has {src} rows but target batch has {tgt}")]
    BatchMismatch { src: usize, tgt: usize },
    #[error("parameter {0} is missing or has the wrong shape")]
    ParameterShape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Encoder layers and, separately, decoder layers.
    pub num_layers: usize,
    pub ff_size: usize,
    /// Total attention width over all heads.
    pub attention_size: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
}

impl ModelConfig {
    /// The reference hyperparameters: 32 wide embeddings, 2 layers, 32 wide
    /// feed-forward and attention, 2 heads, dropout 0.1.
    pub fn standard(src_vocab_size: usize, tgt_vocab_size: usize) -> Self {
        Self {
            embedding_dim: 32,
            num_layers: 2,
            ff_size: 32,
            attention_size: 32,
            num_heads: 2,
            dropout: 0.1,
            max_seq_len: 64,
            src_vocab_size,
            tgt_vocab_size,
        }
    }

    pub fn with_vocab_sizes(mut self, src: usize, tgt: usize) -> Self {
        self.src_vocab_size = src;
        self.tgt_vocab_size = tgt;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.attention_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("embedding_dim", self.embedding_dim),
            ("num_layers", self.num_layers),
            ("ff_size", self.ff_size),
            ("attention_size", self.attention_size),
            ("num_heads", self.num_heads),
            ("max_seq_len", self.max_seq_len),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.attention_size.is_multiple_of(self.num_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "attention_size {} is not divisible by num_heads {}",
                self.attention_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Scaled uniform with bound `sqrt(6 / (fan_in + fan_out))`.
    Weight { fan_in: usize, fan_out: usize },
    Bias,
    Gain,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Clone, Debug)]
struct NormIdx {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct FfIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: AttnIdx,
    norm1: NormIdx,
    ff: FfIdx,
    norm2: NormIdx,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: AttnIdx,
    norm1: NormIdx,
    cross_attn: AttnIdx,
    norm2: NormIdx,
    ff: FfIdx,
    norm3: NormIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out_w: usize,
    out_b: usize,
}

struct SpecBuilder(Vec<ParamSpec>);

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> usize {
        self.0.push(ParamSpec { name, shape, kind });
        self.0.len() - 1
    }

    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        self.push(name, vec![fan_in, fan_out], ParamKind::Weight { fan_in, fan_out })
    }

    fn bias(&mut self, name: String, n: usize) -> usize {
        self.push(name, vec![n], ParamKind::Bias)
    }

    fn attn(&mut self, prefix: &str, d: usize, a: usize) -> AttnIdx {
        AttnIdx {
            wq: self.weight(format!("{prefix}.q.weight"), d, a),
            bq: self.bias(format!("{prefix}.q.bias"), a),
            wk: self.weight(format!("{prefix}.k.weight"), d, a),
            bk: self.bias(format!("{prefix}.k.bias"), a),
            wv: self.weight(format!("{prefix}.v.weight"), d, a),
            bv: self.bias(format!("{prefix}.v.bias"), a),
            wo: self.weight(format!("{prefix}.o.weight"), a, d),
            bo: self.bias(format!("{prefix}.o.bias"), d),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            gain: self.push(format!("{prefix}.gain"), vec![d], ParamKind::Gain),
            bias: self.bias(format!("{prefix}.bias"), d),
        }
    }

    fn ff(&mut self, prefix: &str, d: usize, f: usize) -> FfIdx {
        FfIdx {
            w1: self.weight(format!("{prefix}.w1"), d, f),
            b1: self.bias(format!("{prefix}.b1"), f),
            w2: self.weight(format!("{prefix}.w2"), f, d),
            b2: self.bias(format!("{prefix}.b2"), d),
        }
    }
}

fn layout(config: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let (d, a, f) = (config.embedding_dim, config.attention_size, config.ff_size);
    let mut b = SpecBuilder(Vec::new());
    let src_embed = b.weight("src_embed".into(), config.src_vocab_size, d);
    let tgt_embed = b.weight("tgt_embed".into(), config.tgt_vocab_size, d);
    let encoder = (0..config.num_layers)
        .map(|l| EncoderLayer {
            attn: b.attn(&format!("encoder.{l}.self_attn"), d, a),
            norm1: b.norm(&format!("encoder.{l}.norm1"), d),
            ff: b.ff(&format!("encoder.{l}.ff"), d, f),
            norm2: b.norm(&format!("encoder.{l}.norm2"), d),
        })
        .collect();
    let decoder = (0..config.num_layers)
        .map(|l| DecoderLayer {
            self_attn: b.attn(&format!("decoder.{l}.self_attn"), d, a),
            norm1: b.norm(&format!("decoder.{l}.norm1"), d),
            cross_attn: b.attn(&format!("decoder.{l}.cross_attn"), d, a),
            norm2: b.norm(&format!("decoder.{l}.norm2"), d),
            ff: b.ff(&format!("decoder.{l}.ff"), d, f),
            norm3: b.norm(&format!("decoder.{l}.norm3"), d),
        })
        .collect();
    let out_w = b.weight("output.weight".into(), d, config.tgt_vocab_size);
    let out_b = b.bias("output.bias".into(), config.tgt_vocab_size);
    let layout = Layout {
        src_embed,
        tgt_embed,
        encoder,
        decoder,
        out_w,
        out_b,
    };
    (layout, b.0)
}

/// Every learnable tensor in a fixed order, with its shape and initialiser.
pub fn parameter_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>, ModelError> {
    config.validate()?;
    Ok(layout(config).1)
}

pub fn count_parameters(config: &ModelConfig) -> Result<usize, ModelError> {
    Ok(parameter_specs(config)?.iter().map(|s| s.shape.iter().product::<usize>()).sum())
}

/// Named parameter tensors in [`parameter_specs`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Parameters<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors_mut().for_each(Tensor::zero_grad);
    }
}

/// Tape handles for every parameter, in parameter order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// Right-padded id matrix whose padding is defined by `lens`, not by the
/// content of the padded cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedIds {
    ids: Vec<usize>,
    lens: Vec<usize>,
    width: usize,
}

impl PaddedIds {
    pub fn new(seqs: &[Vec<usize>]) -> Self {
        let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * width);
        for s in seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD, width - s.len()));
        }
        Self {
            ids,
            lens: seqs.iter().map(Vec::len).collect(),
            width,
        }
    }

    pub fn from_parts(ids: Vec<usize>, lens: Vec<usize>, width: usize) -> Result<Self, ModelError> {
        if ids.len() != lens.len() * width || lens.iter().any(|&l| l > width) {
            return Err(ModelError::InvalidConfig("padded ids inconsistent with lens".into()));
        }
        Ok(Self { ids, lens, width })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [usize] {
        &mut self.ids
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.width..(b + 1) * self.width]
    }
}

pub enum Mode<'a> {
    Eval,
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut Rng),
}

#[derive(Clone, Debug, PartialEq)]
pub struct G2pModel<T> {
    config: ModelConfig,
    params: Parameters<T>,
    layout: Layout,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.out_b == other.out_b && self.encoder.len() == other.encoder.len()
    }
}

impl<T: Scalar> G2pModel<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        let mut rng = Rng::new(seed);
        let entries = specs
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data: Vec<T> = match spec.kind {
                    ParamKind::Weight { fan_in, fan_out } => {
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect()
                    }
                    ParamKind::Bias => vec![T::zero(); n],
                    ParamKind::Gain => vec![T::one(); n],
                };
                let tensor = Tensor::new(spec.shape, data).expect("spec shape").with_grad();
                (spec.name, tensor)
            })
            .collect();
        Ok(Self {
            config,
            params: Parameters::new(entries),
            layout,
        })
    }

    /// Wraps existing parameters, checking names and shapes against `config`.
    pub fn from_parameters(config: ModelConfig, params: Parameters<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        if specs.len() != params.len() {
            return Err(ModelError::ParameterShape(format!("expected {} tensors, got {}", specs.len(), params.len())));
        }
        for (spec, (name, tensor)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != tensor.shape() {
                return Err(ModelError::ParameterShape(spec.name.clone()));
            }
        }
        let mut params = params;
        params.tensors_mut().for_each(|t| t.set_requires_grad(true));
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        &mut self.params
    }

    pub fn into_params(self) -> Parameters<T> {
        self.params
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(self.params.tensors().map(|t| tape.leaf(t)).collect())
    }

    /// Adds this pass's gradients into every parameter's `grad`.
    pub fn accumulate_grads(&mut self, bound: &Bound, grads: &crate::tensor::Gradients<T>) -> Result<(), ModelError> {
        for (tensor, &var) in self.params.tensors_mut().zip(bound.vars()) {
            grads.accumulate_into(var, tensor)?;
        }
        Ok(())
    }

    fn check_ids(&self, ids: &PaddedIds, vocab: usize) -> Result<(), ModelError> {
        if ids.width() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.width(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = ids.ids().iter().find(|&&id| id >= vocab) {
            return Err(ModelError::IdOutOfRange { id, vocab });
        }
        Ok(())
    }

    /// Encoder output `[B, S, D]`.
    pub fn encode(&self, tape: &mut Tape<T>, bound: &Bound, src: &PaddedIds, mode: &mut Mode<'_>) -> Result<Var, ModelError> {
        self.check_ids(src, self.config.src_vocab_size)?;
        let v = bound.vars();
        let (b, s) = (src.batch(), src.width());
        let mask = tape.constant(key_mask(self.config.num_heads, src.lens(), s, s));
        let mut x = self.embed(tape, v[self.layout.src_embed], src, mode)?;
        for layer in &self.layout.encoder {
            let a = self.attention(tape, v, &layer.attn, x, x, mask)?;
            x = self.residual_norm(tape, v, x, a, &layer.norm1, mode)?;
            let f = self.feed_forward(tape, v, &layer.ff, x)?;
            x = self.residual_norm(tape, v, x, f, &layer.norm2, mode)?;
        }
        debug_assert_eq!(tape.shape(x), &[b, s, self.config.embedding_dim]);
        Ok(x)
    }

    /// Decoder logits `[B, T, tgt_vocab_size]` for teacher-forced inputs.
    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        memory: Var,
        src: &PaddedIds,
        tgt_in: &PaddedIds,
        mode: &mut Mode<'_>,
    ) -> Result<Var, ModelError> {
        self.check_ids(tgt_in, self.config.tgt_vocab_size)?;
        if src.batch() != tgt_in.batch() {
            return Err(ModelError::BatchMismatch {
                src: src.batch(),
                tgt: tgt_in.batch(),
            });
        }
        let v = bound.vars();
        let t = tgt_in.width();
        let causal = tape.constant(causal_mask(self.config.num_heads, tgt_in.batch(), t));
        let cross = tape.constant(key_mask(self.config.num_heads, src.lens(), t, src.width()));
        let mut y = self.embed(tape, v[self.layout.tgt_embed], tgt_in, mode)?;
        for layer in &self.layout.decoder {
            let a = self.attention(tape, v, &layer.self_attn, y, y, causal)?;
            y = self.residual_norm(tape, v, y, a, &layer.norm1, mode)?;
            let c = self.attention(tape, v, &layer.cross_attn, y, memory, cross)?;
            y = self.residual_norm(tape, v, y, c, &layer.norm2, mode)?;
            let f = self.feed_forward(tape, v, &layer.ff, y)?;
            y = self.residual_norm(tape, v, y, f, &layer.norm3, mode)?;
        }
        Ok(tape.linear(y, v[self.layout.out_w], v[self.layout.out_b])?)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        src: &PaddedIds,
        tgt_in: &PaddedIds,
        mode: &mut Mode<'_>,
    ) -> Result<Var, ModelError> {
        if src.batch() != tgt_in.batch() {
            return Err(ModelError::BatchMismatch {
                src: src.batch(),
                tgt: tgt_in.batch(),
            });
        }
        let memory = self.encode(tape, bound, src, mode)?;
        self.decode(tape, bound, memory, src, tgt_in, mode)
    }

    /// Eval-mode logits on a private tape.
    pub fn eval_logits(&self, src: &PaddedIds, tgt_in: &PaddedIds) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let logits = self.forward(&mut tape, &bound, src, tgt_in, &mut Mode::Eval)?;
        Ok(tape.tensor(logits))
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, mode: &mut Mode<'_>) -> Result<Var, ModelError> {
        Ok(match mode {
            Mode::Eval => x,
            Mode::Train(rng) => tape.dropout(x, self.config.dropout, rng)?,
        })
    }

    fn embed(&self, tape: &mut Tape<T>, table: Var, ids: &PaddedIds, mode: &mut Mode<'_>) -> Result<Var, ModelError> {
        let d = self.config.embedding_dim;
        let e = tape.embedding(table, ids.ids(), &[ids.batch(), ids.width()])?;
        let e = tape.scale(e, T::from_f64((d as f64).sqrt()))?;
        let pe = tape.constant(positional_encoding(ids.batch(), ids.width(), d));
        let x = tape.add(e, pe)?;
        self.dropout(tape, x, mode)
    }

    fn residual_norm(
        &self,
        tape: &mut Tape<T>,
        v: &[Var],
        x: Var,
        sub: Var,
        norm: &NormIdx,
        mode: &mut Mode<'_>,
    ) -> Result<Var, ModelError> {
        let sub = self.dropout(tape, sub, mode)?;
        let sum = tape.add(x, sub)?;
        Ok(tape.layer_norm(sum, v[norm.gain], v[norm.bias], LAYER_NORM_EPS)?)
    }

    fn feed_forward(&self, tape: &mut Tape<T>, v: &[Var], ff: &FfIdx, x: Var) -> Result<Var, ModelError> {
        let h = tape.linear(x, v[ff.w1], v[ff.b1])?;
        let h = tape.relu(h)?;
        Ok(tape.linear(h, v[ff.w2], v[ff.b2])?)
    }

    /// Multi-head scaled dot-product attention of `query [B, Tq, D]` over
    /// `memory [B, Tk, D]` with an additive `[B*H, Tq, Tk]` mask.
    fn attention(&self, tape: &mut Tape<T>, v: &[Var], idx: &AttnIdx, query: Var, memory: Var, mask: Var) -> Result<Var, ModelError> {
        let (b, tq) = (tape.shape(query)[0], tape.shape(query)[1]);
        let tk = tape.shape(memory)[1];
        let h = self.config.num_heads;
        let dh = self.config.head_dim();
        let split = |tape: &mut Tape<T>, x: Var, len: usize| -> Result<Var, TensorError> {
            let x = tape.reshape(x, &[b, len, h, dh])?;
            let x = tape.permute(x, &[0, 2, 1, 3])?;
            tape.reshape(x, &[b * h, len, dh])
        };
        let q = tape.linear(query, v[idx.wq], v[idx.bq])?;
        let q = split(tape, q, tq)?;
        let k = tape.linear(memory, v[idx.wk], v[idx.bk])?;
        let k = split(tape, k, tk)?;
        let val = tape.linear(memory, v[idx.wv], v[idx.bv])?;
        let val = split(tape, val, tk)?;
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, T::from_f64(1.0 / (dh as f64).sqrt()))?;
        let scores = tape.add(scores, mask)?;
        let weights = tape.softmax(scores)?;
        let ctx = tape.bmm(weights, val, false)?;
        let ctx = tape.reshape(ctx, &[b, h, tq, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, tq, h * dh])?;
        Ok(tape.linear(ctx, v[idx.wo], v[idx.bo])?)
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`,
/// repeated over the batch.
pub fn positional_encoding<T: Scalar>(batch: usize, len: usize, d: usize) -> Tensor<T> {
    let mut row = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            row.push(T::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    let data = row.iter().copied().cycle().take(batch * len * d).collect();
    Tensor::new(vec![batch, len, d], data).expect("pe shape")
}

/// Masks keys at or beyond each row's length, for every head and query.
fn key_mask<T: Scalar>(heads: usize, lens: &[usize], queries: usize, keys: usize) -> Tensor<T> {
    let masked = T::from_f64(MASKED);
    let mut data = Vec::with_capacity(lens.len() * heads * queries * keys);
    for &len in lens {
        for _ in 0..heads * queries {
            data.extend((0..keys).map(|j| if j < len { T::zero() } else { masked }));
        }
    }
    Tensor::new(vec![lens.len() * heads, queries, keys], data).expect("mask shape")
}

/// Masks keys after the query position.
fn causal_mask<T: Scalar>(heads: usize, batch: usize, len: usize) -> Tensor<T> {
    let masked = T::from_f64(MASKED);
    let mut data = Vec::with_capacity(batch * heads * len * len);
    for _ in 0..batch * heads {
        for i in 0..len {
            data.extend((0..len).map(|j| if j <= i { T::zero() } else { masked }));
        }
    }
    Tensor::new(vec![batch * heads, len, len], data).expect("mask shape")
}
