//! Per-language pipeline stages and the report.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use g2p_core::complexity::{
    compare_with_published, compute_record, emit_scatter, emit_table, Comparison, ComplexityError, ComplexityRecord, Table,
};
use g2p_core::evaluation::{evaluate, teacher_forced_accuracy, Denominator, EvalError, EvalResult};
use g2p_core::lexicon::{
    normalize_all, parse_lexicon_lenient, proportional_sample, retain_within, sample_and_split, DatasetSplit,
    LexiconError, Vocabulary,
};
use g2p_core::training::{train_language, CheckpointError, ModelCheckpoint, TrainError};
use thiserror::Error;

use crate::manifest::{LanguageSpec, Manifest, Sampling};

pub const SPLITS: &str = "splits.tsv";
pub const VOCAB_SRC: &str = "vocab.src";
pub const VOCAB_TGT: &str = "vocab.tgt";
pub const CHECKPOINT: &str = "model.g2pc";
pub const TRAIN_LOG: &str = "train.log";
pub const EVAL: &str = "eval.tsv";
pub const PREDICTIONS: &str = "predictions.tsv";
pub const FIGURE: &str = "figure1.svg";
/// Written by `prepare` for a language that does not qualify.
pub const SKIPPED: &str = "skipped.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Lexicon { path: PathBuf, source: LexiconError },
    #[error("no prepared split for {0}; run `prepare` first")]
    MissingSplit(String),
    #[error("no checkpoint for {0}; run `train` first")]
    MissingCheckpoint(String),
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("{path}: malformed evaluation summary ({reason})")]
    BadSummary { path: PathBuf, reason: String },
    #[error("report: {0}")]
    Complexity(#[from] ComplexityError),
    #[error("no evaluation results for: {}", .0.join(", "))]
    IncompleteResults(Vec<String>),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    // write-then-rename so an interrupted run never leaves a half file behind
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done(String),
    /// Existing artifacts were kept (run again with `--force` to redo).
    UpToDate,
    /// The language does not qualify for the experiment.
    Skipped(String),
}

pub fn prepare(m: &Manifest, lang: &LanguageSpec, force: bool) -> Result<Outcome, PipelineError> {
    let dir = m.language_dir(&lang.tag);
    if !force && dir.join(SPLITS).exists() && dir.join(VOCAB_SRC).exists() && dir.join(VOCAB_TGT).exists() {
        return Ok(Outcome::UpToDate);
    }
    let raw = fs::read(&lang.path).map_err(io_err(&lang.path))?;
    let lexicon_err = |source| PipelineError::Lexicon {
        path: lang.path.clone(),
        source,
    };
    let (entries, bad_lines) = parse_lexicon_lenient(&raw).map_err(lexicon_err)?;
    if !bad_lines.is_empty() {
        log::warn!("{}: skipped {} malformed lines", lang.tag, bad_lines.len());
    }
    let mut entries = normalize_all(&entries);
    // source must fit the encoder and BOS + target the decoder
    let max = m.model.max_seq_len;
    let too_long = retain_within(&mut entries, max, max - 1);
    if too_long > 0 {
        log::info!("{}: dropped {too_long} entries longer than {max} symbols", lang.tag);
    }
    if entries.len() < m.min_records {
        let why = format!("{} usable records, fewer than {}", entries.len(), m.min_records);
        write_file(&dir.join(SKIPPED), format!("{why}\n"))?;
        return Ok(Outcome::Skipped(why));
    }
    let marker = dir.join(SKIPPED);
    if marker.exists() {
        fs::remove_file(&marker).map_err(io_err(&marker))?;
    }
    let split = match &lang.sampling {
        Sampling::Fixed { sample_size, sizes } => {
            sample_and_split(&entries, &lang.tag, lang.seed, *sample_size, *sizes).map_err(lexicon_err)?
        }
        Sampling::Proportional {
            samples_per_char,
            dev,
            test,
        } => proportional_sample(&entries, &lang.tag, lang.seed, *samples_per_char, *dev, *test).map_err(lexicon_err)?,
    };
    let (src, tgt) = split.vocabularies().map_err(lexicon_err)?;
    let mut manifest = Vec::new();
    split.write_manifest(&mut manifest).expect("in-memory write");
    write_file(&dir.join(SPLITS), manifest)?;
    write_vocab(&dir.join(VOCAB_SRC), &src)?;
    write_vocab(&dir.join(VOCAB_TGT), &tgt)?;
    Ok(Outcome::Done(format!(
        "{} train / {} dev / {} test, {} graphemes, {} phonemes",
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        src.inventory_size(),
        tgt.inventory_size()
    )))
}

fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    vocab.write_to(&mut buf).expect("in-memory write");
    write_file(path, buf)
}

pub fn load_split(m: &Manifest, tag: &str) -> Result<DatasetSplit, PipelineError> {
    let path = m.language_dir(tag).join(SPLITS);
    if !path.exists() {
        return Err(PipelineError::MissingSplit(tag.to_string()));
    }
    DatasetSplit::parse_manifest(&read_text(&path)?).map_err(|source| PipelineError::Lexicon { path, source })
}

pub fn train(m: &Manifest, lang: &LanguageSpec, force: bool) -> Result<Outcome, PipelineError> {
    let dir = m.language_dir(&lang.tag);
    let ckpt_path = dir.join(CHECKPOINT);
    if !force && ckpt_path.exists() {
        return Ok(Outcome::UpToDate);
    }
    let split = load_split(m, &lang.tag)?;
    let config = g2p_core::TrainConfig {
        seed: lang.seed,
        ..m.train.clone()
    };
    let mut log_text = String::from("epoch\ttrain_loss\tdev_loss\tseconds\n");
    let ckpt = train_language(&split, &m.model, &config, |r| {
        log_text.push_str(&r.log_line());
        log_text.push('\n');
    })?;
    let steps = ckpt.log.last().map_or(0, |r| r.steps);
    write_file(&ckpt_path, ckpt.to_bytes())?;
    write_file(&dir.join(TRAIN_LOG), log_text)?;
    let last = ckpt.log.last().map(|r| format!(", final train loss {:.4}", r.train_loss)).unwrap_or_default();
    Ok(Outcome::Done(format!("{} epochs, {steps} steps{last}", ckpt.log.len())))
}

/// Key-value summary written next to the per-item predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub language_tag: String,
    pub n_items: usize,
    pub char_accuracy: f64,
    pub wer: f64,
    pub per: f64,
    pub denominator: Denominator,
    pub ipa_vocab_len: u64,
    pub source_vocab_len: u64,
    pub train_size: u64,
    /// Gold-prefix token accuracy on the same test set, for diagnosis.
    pub teacher_forced_accuracy: Option<f64>,
}

impl EvalSummary {
    pub fn render(&self) -> String {
        let denominator = match self.denominator {
            Denominator::Max => "max",
            Denominator::Gold => "gold",
        };
        let mut out = String::new();
        let _ = writeln!(out, "language\t{}", self.language_tag);
        let _ = writeln!(out, "n_items\t{}", self.n_items);
        let _ = writeln!(out, "char_accuracy\t{}", self.char_accuracy);
        let _ = writeln!(out, "wer\t{}", self.wer);
        let _ = writeln!(out, "per\t{}", self.per);
        let _ = writeln!(out, "denominator\t{denominator}");
        let _ = writeln!(out, "ipa_vocab_len\t{}", self.ipa_vocab_len);
        let _ = writeln!(out, "source_vocab_len\t{}", self.source_vocab_len);
        let _ = writeln!(out, "train_size\t{}", self.train_size);
        if let Some(tf) = self.teacher_forced_accuracy {
            let _ = writeln!(out, "teacher_forced_accuracy\t{tf}");
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, PipelineError> {
        let bad = |reason: String| PipelineError::BadSummary {
            path: path.to_path_buf(),
            reason,
        };
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('\t').ok_or_else(|| bad(format!("line {line:?}")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing {k}")));
        fn num<T: std::str::FromStr>(v: &str, k: &str, bad: &dyn Fn(String) -> PipelineError) -> Result<T, PipelineError> {
            v.parse().map_err(|_| bad(format!("{k} = {v:?}")))
        }
        let denominator = match get("denominator")? {
            "max" => Denominator::Max,
            "gold" => Denominator::Gold,
            other => return Err(bad(format!("denominator = {other:?}"))),
        };
        Ok(Self {
            language_tag: get("language")?.to_string(),
            n_items: num(get("n_items")?, "n_items", &bad)?,
            char_accuracy: num(get("char_accuracy")?, "char_accuracy", &bad)?,
            wer: num(get("wer")?, "wer", &bad)?,
            per: num(get("per")?, "per", &bad)?,
            denominator,
            ipa_vocab_len: num(get("ipa_vocab_len")?, "ipa_vocab_len", &bad)?,
            source_vocab_len: num(get("source_vocab_len")?, "source_vocab_len", &bad)?,
            train_size: num(get("train_size")?, "train_size", &bad)?,
            teacher_forced_accuracy: match fields.get("teacher_forced_accuracy") {
                Some(v) => Some(num(v, "teacher_forced_accuracy", &bad)?),
                None => None,
            },
        })
    }
}

pub fn load_checkpoint(m: &Manifest, tag: &str) -> Result<ModelCheckpoint, PipelineError> {
    let path = m.language_dir(tag).join(CHECKPOINT);
    if !path.exists() {
        return Err(PipelineError::MissingCheckpoint(tag.to_string()));
    }
    ModelCheckpoint::load(&path).map_err(|source| PipelineError::Checkpoint { path, source })
}

pub fn evaluate_language(
    m: &Manifest,
    lang: &LanguageSpec,
    denominator: Denominator,
    force: bool,
) -> Result<Outcome, PipelineError> {
    let dir = m.language_dir(&lang.tag);
    if !force && dir.join(EVAL).exists() && dir.join(PREDICTIONS).exists() {
        return Ok(Outcome::UpToDate);
    }
    let ckpt = load_checkpoint(m, &lang.tag)?;
    let split = load_split(m, &lang.tag)?;
    let result: EvalResult = evaluate(&ckpt, &split.test, denominator)?;
    let teacher_forced = teacher_forced_accuracy(&ckpt, &split.test)?;
    let mut predictions = Vec::new();
    result.write_predictions(BufWriter::new(&mut predictions)).expect("in-memory write");
    write_file(&dir.join(PREDICTIONS), predictions)?;
    let summary = EvalSummary {
        language_tag: lang.tag.clone(),
        n_items: result.n_items,
        char_accuracy: result.char_accuracy,
        wer: result.wer,
        per: result.per,
        denominator,
        ipa_vocab_len: ckpt.tgt_vocab.inventory_size() as u64,
        source_vocab_len: ckpt.src_vocab.inventory_size() as u64,
        train_size: split.train.len() as u64,
        teacher_forced_accuracy: Some(teacher_forced),
    };
    write_file(&dir.join(EVAL), summary.render())?;
    Ok(Outcome::Done(format!(
        "accuracy {:.2}%, WER {:.2}%, PER {:.2}% on {} items (teacher-forced {:.2}%)",
        100.0 * result.char_accuracy,
        100.0 * result.wer,
        100.0 * result.per,
        result.n_items,
        100.0 * teacher_forced
    )))
}

pub fn load_summary(m: &Manifest, tag: &str) -> Result<Option<EvalSummary>, PipelineError> {
    let path = m.language_dir(tag).join(EVAL);
    if !path.exists() {
        return Ok(None);
    }
    EvalSummary::parse(&read_text(&path)?, &path).map(Some)
}

pub struct ReportOutput {
    pub records: Vec<ComplexityRecord>,
    pub missing: Vec<String>,
    pub files: Vec<PathBuf>,
    pub comparison: Comparison,
}

/// Emits the two tables and the figure for every evaluated language.
/// Languages without results are listed in `missing`; if none have results
/// the report fails with `IncompleteResults`.
pub fn report(m: &Manifest, langs: &[&LanguageSpec]) -> Result<ReportOutput, PipelineError> {
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for lang in langs {
        match load_summary(m, &lang.tag)? {
            Some(s) => records.push(compute_record(
                &lang.tag,
                lang.orthography,
                s.ipa_vocab_len,
                s.source_vocab_len,
                s.char_accuracy,
                s.train_size,
            )?),
            None => missing.push(lang.tag.clone()),
        }
    }
    if records.is_empty() {
        return Err(PipelineError::IncompleteResults(missing));
    }
    let dir = m.report_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut files = Vec::new();
    for which in [Table::Inventories, Table::Sparsity] {
        let path = dir.join(which.file_name());
        emit_table(&records, which, &path)?;
        files.push(path);
    }
    let figure = dir.join(FIGURE);
    emit_scatter(&records, &figure)?;
    files.push(figure);
    let comparison = compare_with_published(&records);
    Ok(ReportOutput {
        records,
        missing,
        files,
        comparison,
    })
}
