//! Adam training with teacher forcing, and the portable checkpoint format.

use std::fs;
use std::io;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{DatasetSplit, LexiconError, Pair, Side, Vocabulary, BOS, EOS, PAD};
use crate::model::{G2pModel, Mode, ModelConfig, ModelError, PaddedIds, Parameters};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Scalar, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptySplit,
    #[error("adam: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub gradient_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            batch_size: 512,
            epochs: 20,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            gradient_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn batches_per_epoch(&self, train_pairs: usize) -> usize {
        train_pairs.div_ceil(self.batch_size.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment accumulators for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One bias-corrected Adam update of `theta` at step `t` (1-based).
pub fn adam_step<T: Scalar>(
    theta: &mut [T],
    grad: &[T],
    state: &mut AdamMoments<T>,
    t: u64,
    config: &AdamConfig,
) -> Result<(), TrainError> {
    if grad.len() != theta.len() || state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "params {}, grads {}, moments {}/{}",
            theta.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(TrainError::ShapeMismatch("step index starts at 1".into()));
    }
    let b1 = T::from_f64(config.beta1);
    let b2 = T::from_f64(config.beta2);
    let one = T::one();
    let c1 = T::from_f64(1.0 - config.beta1.powf(t as f64));
    let c2 = T::from_f64(1.0 - config.beta2.powf(t as f64));
    let lr = T::from_f64(config.learning_rate);
    let eps = T::from_f64(config.eps);
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a whole parameter set, consuming the gradients stored on it.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    moments: Vec<AdamMoments<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &Parameters<T>) -> Self {
        Self {
            config,
            moments: params.tensors().map(|t| AdamMoments::zeros(t.len())).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &[AdamMoments<T>] {
        &self.moments
    }

    /// Applies one update and clears the gradients. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut Parameters<T>) -> Result<(), TrainError> {
        if self.moments.len() != params.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} moment sets for {} tensors",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        for (tensor, state) in params.tensors_mut().zip(&mut self.moments) {
            let grad = tensor.grad().map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); tensor.len()]);
            adam_step(tensor.data_mut(), &grad, state, self.step, &self.config)?;
        }
        params.zero_grads();
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(params: &mut Parameters<T>, max_norm: f64) -> f64 {
    let sq: f64 = params
        .tensors()
        .filter_map(Tensor::grad)
        .flat_map(|g| g.iter().map(|x| x.as_f64() * x.as_f64()))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = T::from_f64(max_norm / norm);
        for t in params.tensors_mut() {
            if let Some(g) = t.grad().map(|g| g.iter().map(|&x| x * factor).collect::<Vec<_>>()) {
                t.zero_grad();
                t.accumulate_grad(&g).expect("same length");
            }
        }
    }
    norm
}

/// A pair as vocabulary ids, without specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

pub fn encode_pairs(pairs: &[Pair], src: &Vocabulary, tgt: &Vocabulary) -> Vec<EncodedPair> {
    pairs
        .iter()
        .map(|p| EncodedPair {
            source: src.encode(&p.source),
            target: tgt.encode(&p.target),
        })
        .collect()
}

/// Teacher-forced batch: decoder input `BOS + target`, loss target
/// `target + EOS`, both right-padded to the longest row in the batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainBatch {
    pub src: PaddedIds,
    pub tgt_in: PaddedIds,
    /// Flattened `[batch * tgt_in.width()]`, PAD where ignored.
    pub targets: Vec<usize>,
}

impl TrainBatch {
    pub fn new(pairs: &[&EncodedPair]) -> Self {
        let src = PaddedIds::new(&pairs.iter().map(|p| p.source.clone()).collect::<Vec<_>>());
        let inputs: Vec<Vec<usize>> = pairs
            .iter()
            .map(|p| std::iter::once(BOS).chain(p.target.iter().copied()).collect())
            .collect();
        let tgt_in = PaddedIds::new(&inputs);
        let width = tgt_in.width();
        let mut targets = Vec::with_capacity(pairs.len() * width);
        for p in pairs {
            targets.extend(&p.target);
            targets.push(EOS);
            targets.extend(std::iter::repeat_n(PAD, width - p.target.len() - 1));
        }
        Self { src, tgt_in, targets }
    }

    pub fn len(&self) -> usize {
        self.src.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn target_tokens(&self) -> usize {
        self.targets.iter().filter(|&&t| t != PAD).count()
    }
}

/// Fixed-order batches (the last one may be short).
pub fn make_batches(data: &[EncodedPair], order: &[usize], batch_size: usize) -> Vec<TrainBatch> {
    order
        .chunks(batch_size.max(1))
        .map(|chunk| TrainBatch::new(&chunk.iter().map(|&i| &data[i]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-weighted mean training loss over the epoch (dropout active).
    pub train_loss: f64,
    /// Token-weighted mean dev loss after the epoch, eval mode. `None` when
    /// there is no dev set.
    pub dev_loss: Option<f64>,
    pub seconds: f64,
    /// Optimizer steps completed by the end of this epoch.
    pub steps: u64,
}

impl EpochRecord {
    /// `epoch<TAB>train_loss<TAB>dev_loss<TAB>seconds`.
    pub fn log_line(&self) -> String {
        let dev = self.dev_loss.map_or_else(|| "nan".to_string(), |d| format!("{d:.6}"));
        format!("{}\t{:.6}\t{}\t{:.3}", self.epoch, self.train_loss, dev, self.seconds)
    }
}

/// Owns a model and its optimizer for one training run.
pub struct Trainer {
    model: G2pModel<f32>,
    adam: Adam<f32>,
    config: TrainConfig,
    dropout_rng: Rng,
}

impl Trainer {
    pub fn new(model: G2pModel<f32>, config: TrainConfig) -> Self {
        let adam = Adam::new(config.adam(), model.params());
        let dropout_rng = Rng::new(derive_seed(config.seed, "dropout"));
        Self {
            model,
            adam,
            config,
            dropout_rng,
        }
    }

    pub fn model(&self) -> &G2pModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> G2pModel<f32> {
        self.model
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// One optimizer step; returns the batch's mean loss.
    pub fn step(&mut self, batch: &TrainBatch) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let mut mode = Mode::Train(&mut self.dropout_rng);
        let logits = self.model.forward(&mut tape, &bound, &batch.src, &batch.tgt_in, &mut mode)?;
        let vocab = self.model.config().tgt_vocab_size;
        let flat = tape.reshape(logits, &[batch.targets.len(), vocab])?;
        let loss = tape.cross_entropy(flat, &batch.targets, PAD)?;
        let value = tape.value(loss)[0].as_f64();
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: self.adam.steps() + 1,
            });
        }
        let grads = tape.backward(loss)?;
        self.model.accumulate_grads(&bound, &grads)?;
        if let Some(max_norm) = self.config.gradient_clip {
            clip_gradients(self.model.params_mut(), max_norm);
        }
        self.adam.step(self.model.params_mut())?;
        Ok(value)
    }

    /// Eval-mode `(summed loss, target tokens, correct argmax tokens)`.
    pub fn evaluate_batch(&self, batch: &TrainBatch) -> Result<(f64, usize, usize), TrainError> {
        let logits = self.model.eval_logits(&batch.src, &batch.tgt_in)?;
        let vocab = self.model.config().tgt_vocab_size;
        let mut loss = 0.0;
        let mut tokens = 0;
        let mut correct = 0;
        for (row, &t) in logits.data().chunks(vocab).zip(&batch.targets) {
            if t == PAD {
                continue;
            }
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(f64::from(x)));
            let lse = max + row.iter().map(|&x| (f64::from(x) - max).exp()).sum::<f64>().ln();
            loss += lse - f64::from(row[t]);
            tokens += 1;
            if argmax_excluding_specials(row) == t {
                correct += 1;
            }
        }
        Ok((loss, tokens, correct))
    }

    /// Token-weighted eval loss and teacher-forced token accuracy.
    pub fn evaluate(&self, batches: &[TrainBatch]) -> Result<(f64, f64), TrainError> {
        let (mut loss, mut tokens, mut correct) = (0.0, 0, 0);
        for b in batches {
            let (l, n, c) = self.evaluate_batch(b)?;
            loss += l;
            tokens += n;
            correct += c;
        }
        let n = tokens.max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Runs one epoch over `data` in a freshly shuffled order.
    pub fn epoch(&mut self, data: &[EncodedPair], shuffle: &mut Rng) -> Result<f64, TrainError> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle.shuffle(&mut order);
        let mut loss = 0.0;
        let mut tokens = 0;
        for batch in make_batches(data, &order, self.config.batch_size) {
            let n = batch.target_tokens();
            loss += self.step(&batch)? * n as f64;
            tokens += n;
        }
        Ok(loss / tokens.max(1) as f64)
    }
}

/// Highest scoring id among non-PAD, non-BOS tokens; ties go to the lowest id.
pub fn argmax_excluding_specials<T: Scalar>(row: &[T]) -> usize {
    let mut best = EOS;
    for (id, &x) in row.iter().enumerate().skip(EOS + 1) {
        if x > row[best] {
            best = id;
        }
    }
    best
}

/// Trains one language for the configured number of epochs and returns the
/// final parameters. `on_epoch` sees every record as it is produced.
pub fn train_language(
    split: &DatasetSplit,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<ModelCheckpoint, TrainError> {
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let (src_vocab, tgt_vocab) = split.vocabularies()?;
    let config = model_config.clone().with_vocab_sizes(src_vocab.len(), tgt_vocab.len());
    let model = G2pModel::init(config.clone(), derive_seed(train_config.seed, "init"))?;
    let train = encode_pairs(&split.train, &src_vocab, &tgt_vocab);
    let dev = encode_pairs(&split.dev, &src_vocab, &tgt_vocab);
    let dev_order: Vec<usize> = (0..dev.len()).collect();
    let dev_batches = make_batches(&dev, &dev_order, train_config.batch_size);
    let mut shuffle = Rng::new(derive_seed(train_config.seed, "shuffle"));
    let mut trainer = Trainer::new(model, train_config.clone());
    let mut log = Vec::with_capacity(train_config.epochs);
    for epoch in 1..=train_config.epochs {
        let start = Instant::now();
        let train_loss = trainer.epoch(&train, &mut shuffle)?;
        let dev_loss = if dev_batches.is_empty() {
            None
        } else {
            Some(trainer.evaluate(&dev_batches)?.0)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            seconds: start.elapsed().as_secs_f64(),
            steps: trainer.steps(),
        };
        log::info!("{} epoch {}", split.language_tag, record.log_line());
        on_epoch(&record);
        log.push(record);
    }
    Ok(ModelCheckpoint {
        model_config: config,
        train_config: train_config.clone(),
        src_vocab,
        tgt_vocab,
        params: trainer.into_model().into_params(),
        log,
        language_tag: split.language_tag.clone(),
        seed: split.seed,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"G2PC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic or truncated header)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint metadata: {0}")]
    CorruptMetadata(String),
    #[error("corrupt tensor record {0:?}")]
    CorruptTensor(String),
}

/// Everything needed to decode with a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub params: Parameters<f32>,
    pub log: Vec<EpochRecord>,
    pub language_tag: String,
    /// Seed of the split the model was trained on.
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabMeta {
    side: Side,
    tokens: Vec<String>,
}

impl From<&Vocabulary> for VocabMeta {
    fn from(v: &Vocabulary) -> Self {
        Self {
            side: v.side(),
            tokens: v.corpus_tokens().to_vec(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    model_config: ModelConfig,
    train_config: TrainConfig,
    src_vocab: VocabMeta,
    tgt_vocab: VocabMeta,
    log: Vec<EpochRecord>,
    language_tag: String,
    seed: u64,
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.data.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

impl ModelCheckpoint {
    pub fn model(&self) -> Result<G2pModel<f32>, ModelError> {
        G2pModel::from_parameters(self.model_config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            src_vocab: (&self.src_vocab).into(),
            tgt_vocab: (&self.tgt_vocab).into(),
            log: self.log.clone(),
            language_tag: self.language_tag.clone(),
            seed: self.seed,
        };
        let json = serde_json::to_vec(&meta).expect("metadata serialises");
        let mut out = Vec::with_capacity(json.len() + 4 * self.params.scalar_count() + 256);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in tensor.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { data: bytes, pos: 0 };
        if r.take(4) != Some(CHECKPOINT_MAGIC) {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32().ok_or(CheckpointError::BadMagic)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let truncated = || CheckpointError::CorruptMetadata("truncated".into());
        let meta_len = r.u64().ok_or_else(truncated)?;
        let json = r.take(usize::try_from(meta_len).map_err(|_| truncated())?).ok_or_else(truncated)?;
        let meta: Metadata = serde_json::from_slice(json).map_err(|e| CheckpointError::CorruptMetadata(e.to_string()))?;
        let vocab = |v: VocabMeta| {
            Vocabulary::from_tokens(v.side, v.tokens).map_err(|e| CheckpointError::CorruptMetadata(e.to_string()))
        };
        let src_vocab = vocab(meta.src_vocab)?;
        let tgt_vocab = vocab(meta.tgt_vocab)?;

        let count = r.u32().ok_or_else(|| CheckpointError::CorruptTensor("<count>".into()))?;
        let mut entries = Vec::with_capacity(count.min(4096) as usize);
        for i in 0..count {
            let fallback = format!("<tensor {i}>");
            let corrupt = |name: &str| CheckpointError::CorruptTensor(name.to_string());
            let name_len = r.u32().ok_or_else(|| corrupt(&fallback))? as usize;
            let name = r
                .take(name_len)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| corrupt(&fallback))?
                .to_string();
            let rank = r.u32().ok_or_else(|| corrupt(&name))? as usize;
            if rank > 8 {
                return Err(corrupt(&name));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64().ok_or_else(|| corrupt(&name))?;
                shape.push(usize::try_from(d).map_err(|_| corrupt(&name))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| corrupt(&name))?;
            let raw = r.take(n).ok_or_else(|| corrupt(&name))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|_| corrupt(&name))?.with_grad();
            entries.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::CorruptTensor("<trailing bytes>".into()));
        }
        let params = Parameters::new(entries);
        let ckpt = Self {
            model_config: meta.model_config,
            train_config: meta.train_config,
            src_vocab,
            tgt_vocab,
            params,
            log: meta.log,
            language_tag: meta.language_tag,
            seed: meta.seed,
        };
        // names and shapes must describe the configured model
        ckpt.model().map_err(|e| match e {
            ModelError::ParameterShape(name) => CheckpointError::CorruptTensor(name),
            other => CheckpointError::CorruptMetadata(other.to_string()),
        })?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::tokenize;

    #[test]
    fn defaults_match_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.epochs), (0.005, 512, 20));
        assert_eq!((c.adam_beta1, c.adam_beta2, c.adam_eps), (0.9, 0.999, 1e-8));
        assert_eq!(c.gradient_clip, None);
        assert_eq!(c.batches_per_epoch(8000), 16);
        assert_eq!(c.epochs * c.batches_per_epoch(8000), 320);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut theta = vec![0.3f64, -1.0, 2.0];
        let before = theta.clone();
        let mut state = AdamMoments::zeros(3);
        adam_step(&mut theta, &[0.0; 3], &mut state, 1, &TrainConfig::default().adam()).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn one_step_is_learning_rate() {
        let mut theta = vec![1.0f64];
        let mut state = AdamMoments::zeros(1);
        adam_step(&mut theta, &[1.0], &mut state, 1, &TrainConfig::default().adam()).unwrap();
        let expected = 1.0 - 0.005 / (1.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!((theta[0] - 0.995).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_mismatched_shapes() {
        let mut theta = vec![1.0f64; 2];
        let mut state = AdamMoments::zeros(2);
        let cfg = TrainConfig::default().adam();
        assert!(matches!(
            adam_step(&mut theta, &[1.0], &mut state, 1, &cfg),
            Err(TrainError::ShapeMismatch(_))
        ));
        let mut short = AdamMoments::zeros(1);
        assert!(adam_step(&mut theta, &[1.0, 1.0], &mut short, 1, &cfg).is_err());
    }

    /// Reference Adam written in the folded step-size form
    /// `lr * sqrt(1 - b2^t) / (1 - b1^t) * m / (sqrt(v) + eps * sqrt(1 - b2^t))`,
    /// which is algebraically identical to the bias-corrected update.
    fn reference_trajectory(theta0: &[f64], grad: impl Fn(&[f64]) -> Vec<f64>, steps: u32) -> Vec<Vec<f64>> {
        let (lr, b1, b2, eps) = (0.005, 0.9f64, 0.999f64, 1e-8);
        let mut theta = theta0.to_vec();
        let mut m = vec![0.0; theta.len()];
        let mut v = vec![0.0; theta.len()];
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = grad(&theta);
            let c2 = (1.0 - b2.powi(t as i32)).sqrt();
            let step = lr * c2 / (1.0 - b1.powi(t as i32));
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                theta[i] -= step * m[i] / (v[i].sqrt() + eps * c2);
            }
            out.push(theta.clone());
        }
        out
    }

    #[test]
    fn quadratic_bowl_matches_reference() {
        // f(x) = sum_i a_i (x_i - c_i)^2
        let a = [0.5, 2.0, 10.0, 0.01];
        let c = [1.0, -3.0, 0.25, 7.0];
        let grad = |x: &[f64]| (0..4).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect::<Vec<_>>();
        let theta0 = [0.0, 0.0, 1.0, -2.0];
        let expected = reference_trajectory(&theta0, grad, 5);
        let mut theta = theta0.to_vec();
        let mut state = AdamMoments::zeros(4);
        let cfg = TrainConfig::default().adam();
        for (t, want) in (1..=5).zip(&expected) {
            let g = grad(&theta);
            adam_step(&mut theta, &g, &mut state, t, &cfg).unwrap();
            for (x, y) in theta.iter().zip(want) {
                assert!((x - y).abs() < 1e-10, "step {t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut params = Parameters::new(vec![
            ("a".into(), Tensor::<f64>::zeros(vec![2]).with_grad()),
            ("b".into(), Tensor::<f64>::zeros(vec![1]).with_grad()),
        ]);
        {
            let mut ts = params.tensors_mut();
            ts.next().unwrap().accumulate_grad(&[3.0, 0.0]).unwrap();
            ts.next().unwrap().accumulate_grad(&[4.0]).unwrap();
        }
        assert_eq!(clip_gradients(&mut params, 1.0), 5.0);
        let grads: Vec<f64> = params.tensors().flat_map(|t| t.grad().unwrap().to_vec()).collect();
        assert!((grads[0] - 0.6).abs() < 1e-15 && (grads[2] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn batch_layout_is_teacher_forced() {
        let pairs = [
            EncodedPair {
                source: vec![4, 5],
                target: vec![6],
            },
            EncodedPair {
                source: vec![4],
                target: vec![7, 8, 9],
            },
        ];
        let b = TrainBatch::new(&[&pairs[0], &pairs[1]]);
        assert_eq!(b.src.ids(), &[4, 5, 4, PAD]);
        assert_eq!(b.src.lens(), &[2, 1]);
        assert_eq!(b.tgt_in.ids(), &[BOS, 6, PAD, PAD, BOS, 7, 8, 9]);
        assert_eq!(b.targets, vec![6, EOS, PAD, PAD, 7, 8, 9, EOS]);
        assert_eq!(b.target_tokens(), 6);
        let order: Vec<usize> = (0..5).collect();
        let data = vec![pairs[0].clone(); 5];
        let sizes: Vec<usize> = make_batches(&data, &order, 2).iter().map(TrainBatch::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn argmax_skips_pad_and_bos_and_prefers_low_ids() {
        assert_eq!(argmax_excluding_specials(&[9.0f32, 9.0, 1.0, 1.0]), EOS);
        assert_eq!(argmax_excluding_specials(&[0.0f32, 0.0, 1.0, 3.0, 3.0]), 3);
    }

    fn toy_split(words: &[(&str, &str)]) -> DatasetSplit {
        let pairs: Vec<Pair> = words
            .iter()
            .map(|(w, p)| Pair {
                source: tokenize(w, Side::Grapheme),
                target: tokenize(p, Side::Phoneme),
            })
            .collect();
        DatasetSplit {
            language_tag: "xx".into(),
            seed: 3,
            train: pairs[..pairs.len() - 1].to_vec(),
            dev: pairs[pairs.len() - 1..].to_vec(),
            test: Vec::new(),
        }
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            embedding_dim: 8,
            num_layers: 1,
            ff_size: 8,
            attention_size: 8,
            num_heads: 2,
            ..ModelConfig::standard(0, 0)
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let split = toy_split(&[("ab", "ab"), ("ba", "ba"), ("aa", "aa")]);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let ckpt = train_language(&split, &small_model(), &cfg, |_| {}).unwrap();
        assert!(ckpt.log.is_empty());
        let init = G2pModel::<f32>::init(ckpt.model_config.clone(), derive_seed(cfg.seed, "init")).unwrap();
        assert_eq!(&ckpt.params, init.params());
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let mut split = toy_split(&[("ab", "ab"), ("ba", "ba")]);
        split.train.clear();
        assert!(matches!(
            train_language(&split, &small_model(), &TrainConfig::default(), |_| {}),
            Err(TrainError::EmptySplit)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let split = toy_split(&[("ab", "ab"), ("ba", "bb"), ("aab", "ab"), ("b", "a")]);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 8,
            ..TrainConfig::default()
        };
        let a = train_language(&split, &small_model(), &cfg, |_| {}).unwrap();
        let b = train_language(&split, &small_model(), &cfg, |_| {}).unwrap();
        let curve = |c: &ModelCheckpoint| c.log.iter().map(|r| (r.train_loss, r.dev_loss)).collect::<Vec<_>>();
        assert_eq!(curve(&a), curve(&b));
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.last().unwrap().steps, 6);
    }

    fn sample_checkpoint() -> ModelCheckpoint {
        let split = toy_split(&[("ab", "ab"), ("ba", "ba"), ("aa", "aa")]);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        train_language(&split, &small_model(), &cfg, |_| {}).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for ((_, a), (_, b)) in ckpt.params.iter().zip(back.params.iter()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.src_vocab, ckpt.src_vocab);
        assert_eq!(back.log, ckpt.log);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = sample_checkpoint().to_bytes();
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&magic), Err(CheckpointError::BadMagic)));
        let mut version = bytes.clone();
        version[4] ^= 0x02;
        assert!(matches!(
            ModelCheckpoint::from_bytes(&version),
            Err(CheckpointError::UnsupportedVersion(3))
        ));
        match ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(CheckpointError::CorruptTensor(name)) => assert_eq!(name, "output.bias"),
            other => panic!("unexpected {other:?}"),
        }
        // every prefix fails cleanly
        for cut in 0..bytes.len() {
            assert!(ModelCheckpoint::from_bytes(&bytes[..cut]).is_err(), "prefix {cut}");
        }
    }
}
