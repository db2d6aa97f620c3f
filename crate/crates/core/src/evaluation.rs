//! Greedy decoding and character-level scoring.
//!
//! Item accuracy compares prediction and gold position by position. Positions
//! past the end of the shorter sequence count as mismatches and the
//! denominator is the longer length, so both over- and under-generation are
//! penalised. [`Denominator::Gold`] divides by the gold length instead.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Pair, TokenSequence, Vocabulary, BOS, EOS, PAD, UNK};
use crate::model::{G2pModel, Mode, ModelError, PaddedIds};
use crate::parallel;
use crate::tensor::{Scalar, Tape};
use crate::training::{argmax_excluding_specials, encode_pairs, make_batches, ModelCheckpoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("source of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("checkpoint vocabularies do not match the model: {0}")]
    VocabularyMismatch(String),
    #[error(transparent)]
    Model(ModelError),
}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::SequenceTooLong { len, max } => EvalError::SequenceTooLong { len, max },
            other => EvalError::Model(other),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// `max(|pred|, |gold|)`.
    #[default]
    Max,
    /// `|gold|`; an empty gold scores 1 only against an empty prediction.
    Gold,
}

pub fn char_accuracy(pred: &[String], gold: &[String]) -> f64 {
    char_accuracy_with(pred, gold, Denominator::Max)
}

pub fn char_accuracy_with(pred: &[String], gold: &[String], denominator: Denominator) -> f64 {
    let matches = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    let denom = match denominator {
        Denominator::Max => pred.len().max(gold.len()),
        Denominator::Gold => gold.len(),
    };
    if denom == 0 {
        return if pred.is_empty() { 1.0 } else { 0.0 };
    }
    matches as f64 / denom as f64
}

/// Edit distance with unit insertion, deletion and substitution costs.
pub fn levenshtein<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `min(2 * |src| + 8, max_seq_len - 1)`: the decoder input holds BOS plus
/// the emitted tokens and must fit the model.
pub fn default_max_len(src_len: usize, max_seq_len: usize) -> usize {
    (2 * src_len + 8).min(max_seq_len.saturating_sub(1))
}

/// Greedy decoding of one id sequence. Returns emitted ids without BOS/EOS.
pub fn greedy_decode_ids<T: Scalar>(model: &G2pModel<T>, src: &[usize], max_len: usize) -> Result<Vec<usize>, EvalError> {
    let max_seq = model.config().max_seq_len;
    if src.len() > max_seq {
        return Err(EvalError::SequenceTooLong {
            len: src.len(),
            max: max_seq,
        });
    }
    let max_len = max_len.min(max_seq.saturating_sub(1));
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let src = PaddedIds::new(&[src.to_vec()]);
    let memory = model.encode(&mut tape, &bound, &src, &mut Mode::Eval)?;
    let vocab = model.config().tgt_vocab_size;
    let mut prefix = vec![BOS];
    // Nodes recorded before this mark (parameters, encoder) are reused by
    // every step; later ones belong to a single step and are discarded.
    let mark = tape.len();
    while prefix.len() <= max_len {
        let tgt = PaddedIds::new(std::slice::from_ref(&prefix));
        let logits = model.decode(&mut tape, &bound, memory, &src, &tgt, &mut Mode::Eval)?;
        let values = tape.value(logits);
        let last = &values[values.len() - vocab..];
        let next = argmax_excluding_specials(last);
        tape.truncate(mark);
        if next == EOS {
            break;
        }
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(prefix)
}

/// Greedy decoding of a tokenised word with the checkpoint's vocabularies.
pub fn greedy_decode(ckpt: &ModelCheckpoint, src: &TokenSequence, max_len: usize) -> Result<TokenSequence, EvalError> {
    let model = checked_model(ckpt)?;
    let ids = ckpt.src_vocab.encode(src);
    let out = greedy_decode_ids(&model, &ids, max_len)?;
    Ok(ckpt.tgt_vocab.decode(&out))
}

fn checked_model(ckpt: &ModelCheckpoint) -> Result<G2pModel<f32>, EvalError> {
    let cfg = &ckpt.model_config;
    if cfg.src_vocab_size != ckpt.src_vocab.len() || cfg.tgt_vocab_size != ckpt.tgt_vocab.len() {
        return Err(EvalError::VocabularyMismatch(format!(
            "model expects {}/{} ids, vocabularies have {}/{}",
            cfg.src_vocab_size,
            cfg.tgt_vocab_size,
            ckpt.src_vocab.len(),
            ckpt.tgt_vocab.len()
        )));
    }
    if ckpt.src_vocab.side() == ckpt.tgt_vocab.side() {
        return Err(EvalError::VocabularyMismatch("both vocabularies are on the same side".into()));
    }
    Ok(ckpt.model()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub word: String,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub accuracy: f64,
    pub distance: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub language_tag: String,
    pub n_items: usize,
    pub char_accuracy: f64,
    pub wer: f64,
    pub per: f64,
    pub denominator: Denominator,
    pub items: Vec<ItemRecord>,
}

impl EvalResult {
    /// Aggregates per-item records in their given order.
    pub fn from_items(language_tag: &str, items: Vec<ItemRecord>, denominator: Denominator) -> Self {
        let n = items.len();
        let mean = |f: &dyn Fn(&ItemRecord) -> f64| if n == 0 { 0.0 } else { items.iter().map(f).sum::<f64>() / n as f64 };
        let char_accuracy = mean(&|i| i.accuracy);
        let wer = mean(&|i| f64::from(u8::from(i.predicted != i.gold)));
        let gold_len: usize = items.iter().map(|i| i.gold.len()).sum();
        let dist: usize = items.iter().map(|i| i.distance).sum();
        let per = if gold_len == 0 { 0.0 } else { dist as f64 / gold_len as f64 };
        Self {
            language_tag: language_tag.to_string(),
            n_items: n,
            char_accuracy,
            wer,
            per,
            denominator,
            items,
        }
    }

    /// `word<TAB>gold<TAB>predicted<TAB>item_accuracy`, gold and prediction
    /// written as concatenated symbols.
    pub fn write_predictions<W: Write>(&self, mut out: W) -> io::Result<()> {
        for item in &self.items {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}",
                item.word,
                item.gold.concat(),
                item.predicted.concat(),
                item.accuracy
            )?;
        }
        Ok(())
    }
}

pub fn score_item(word: String, gold: Vec<String>, predicted: Vec<String>, denominator: Denominator) -> ItemRecord {
    ItemRecord {
        accuracy: char_accuracy_with(&predicted, &gold, denominator),
        distance: levenshtein(&predicted, &gold),
        word,
        gold,
        predicted,
    }
}

/// Decodes every pair and scores it against its gold pronunciation. Items
/// are processed in parallel and merged in input order.
pub fn evaluate(ckpt: &ModelCheckpoint, pairs: &[Pair], denominator: Denominator) -> Result<EvalResult, EvalError> {
    let model = checked_model(ckpt)?;
    let max_seq = model.config().max_seq_len;
    let decoded = parallel::map_indexed(pairs, |_, pair| {
        let ids = ckpt.src_vocab.encode(&pair.source);
        let out = greedy_decode_ids(&model, &ids, default_max_len(ids.len(), max_seq))?;
        let predicted = ckpt.tgt_vocab.decode(&out).tokens().to_vec();
        Ok(score_item(pair.word(), gold_tokens(&ckpt.tgt_vocab, &pair.target), predicted, denominator))
    });
    let items = decoded.into_iter().collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalResult::from_items(&ckpt.language_tag, items, denominator))
}

/// Token accuracy with the gold prefix fed to the decoder at every step,
/// end-of-sequence included. Predictions line up with gold by construction,
/// so this is a diagnostic beside the free-running score, not a substitute.
pub fn teacher_forced_accuracy(ckpt: &ModelCheckpoint, pairs: &[Pair]) -> Result<f64, EvalError> {
    let model = checked_model(ckpt)?;
    let data = encode_pairs(pairs, &ckpt.src_vocab, &ckpt.tgt_vocab);
    let order: Vec<usize> = (0..data.len()).collect();
    let vocab = model.config().tgt_vocab_size;
    let (mut tokens, mut correct) = (0usize, 0usize);
    for batch in make_batches(&data, &order, 256) {
        let logits = model.eval_logits(&batch.src, &batch.tgt_in)?;
        for (row, &t) in logits.data().chunks(vocab).zip(&batch.targets) {
            if t != PAD {
                tokens += 1;
                correct += usize::from(argmax_excluding_specials(row) == t);
            }
        }
    }
    Ok(if tokens == 0 { 0.0 } else { correct as f64 / tokens as f64 })
}

/// Gold tokens as the model can express them: symbols missing from the
/// target vocabulary become `<unk>`.
fn gold_tokens(vocab: &Vocabulary, gold: &TokenSequence) -> Vec<String> {
    gold.tokens()
        .iter()
        .map(|t| if vocab.id(t).is_some() { t.clone() } else { vocab.token(UNK).expect("specials").to_string() })
        .collect()
}
