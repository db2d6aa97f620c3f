//! ipa-dict wordlists: parsing, normalisation, tokenisation, vocabularies and
//! seeded dataset splits.
//!
//! A wordlist line looks like `word<TAB>/pron/` or
//! `word<TAB>/pron1/, /pron2/`. Words are NFC-normalised, lower-cased and
//! stripped of Unicode punctuation (general category `P*`). Pronunciations
//! are only NFC-normalised: stress and syllable marks such as `ˈ`, `'` and `.`
//! carry phonetic information and stay in.
//!
//! Tokens are single Unicode code points on both sides. Combining marks that
//! survive NFC therefore become tokens of their own.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Write};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use crate::rng::Rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {line}: expected `word<TAB>/pronunciation/`")]
    MalformedLine { line: usize },
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("no tokens observed")]
    EmptyCorpus,
    #[error("not enough entries: have {have}, need {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("split manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    /// Slash-stripped pronunciations in file order. Only the first is used as
    /// a training target.
    pub pronunciations: Vec<String>,
}

impl LexiconEntry {
    pub fn primary_pronunciation(&self) -> &str {
        &self.pronunciations[0]
    }
}

/// Parses a whole wordlist. Blank lines are skipped; every other line must be
/// well formed.
pub fn parse_lexicon(raw: &[u8]) -> Result<Vec<LexiconEntry>, LexiconError> {
    let text = decode_utf8(raw)?;
    let mut entries = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_line(line).ok_or(LexiconError::MalformedLine { line: idx + 1 })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Like [`parse_lexicon`] but skips malformed lines, returning their 1-based
/// line numbers alongside the entries.
pub fn parse_lexicon_lenient(raw: &[u8]) -> Result<(Vec<LexiconEntry>, Vec<usize>), LexiconError> {
    let text = decode_utf8(raw)?;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (idx, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Some(entry) => entries.push(entry),
            None => skipped.push(idx + 1),
        }
    }
    Ok((entries, skipped))
}

fn decode_utf8(raw: &[u8]) -> Result<&str, LexiconError> {
    std::str::from_utf8(raw).map_err(|e| LexiconError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })
}

fn parse_line(line: &str) -> Option<LexiconEntry> {
    let (word, field) = line.split_once('\t')?;
    let word = word.trim();
    if word.is_empty() {
        return None;
    }
    let mut pronunciations = Vec::new();
    let mut rest = field.trim();
    while !rest.is_empty() {
        let body = rest.strip_prefix('/')?;
        let end = body.find('/')?;
        let pron = body[..end].trim();
        if pron.is_empty() {
            return None;
        }
        pronunciations.push(pron.to_string());
        rest = body[end + 1..].trim_start_matches(|c: char| c == ',' || c.is_whitespace());
    }
    if pronunciations.is_empty() {
        return None;
    }
    Some(LexiconEntry {
        word: word.to_string(),
        pronunciations,
    })
}

pub fn is_stripped(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Simple (single code point) lowercase mapping. `char::to_lowercase` is the
/// full mapping; its only multi-character result (U+0130) starts with the
/// simple mapping, so taking the first character recovers it.
fn simple_lowercase(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

pub fn normalize_word(word: &str) -> String {
    let folded: String = word
        .nfc()
        .map(simple_lowercase)
        .filter(|&c| !is_stripped(c))
        .collect();
    folded.nfc().collect()
}

/// Returns `None` when the word is empty after punctuation removal.
pub fn normalize_entry(entry: &LexiconEntry) -> Option<LexiconEntry> {
    let word = normalize_word(&entry.word);
    if word.is_empty() {
        return None;
    }
    Some(LexiconEntry {
        word,
        pronunciations: entry.pronunciations.iter().map(|p| p.nfc().collect()).collect(),
    })
}

pub fn normalize_all(entries: &[LexiconEntry]) -> Vec<LexiconEntry> {
    entries.iter().filter_map(normalize_entry).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Grapheme,
    Phoneme,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Grapheme => "grapheme",
            Side::Phoneme => "phoneme",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<String>,
    side: Side,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, side: Side) -> Self {
        Self { tokens, side }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn concat(&self) -> String {
        self.tokens.concat()
    }
}

/// One token per Unicode code point.
pub fn tokenize(text: &str, side: Side) -> TokenSequence {
    TokenSequence::new(text.chars().map(String::from).collect(), side)
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token/id bijection. Ids 0-3 are the special tokens; corpus tokens follow in
/// ascending code point order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    side: Side,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I>(sequences: I, side: Side) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let mut distinct = BTreeSet::new();
        for seq in sequences {
            if seq.side() != side {
                return Err(LexiconError::InvalidArgument(format!(
                    "{} sequence given to a {side} vocabulary",
                    seq.side()
                )));
            }
            distinct.extend(seq.tokens().iter().map(String::as_str));
        }
        if distinct.is_empty() {
            return Err(LexiconError::EmptyCorpus);
        }
        // BTreeSet<&str> orders by bytes, which for UTF-8 is code point order
        Self::from_tokens(side, distinct.into_iter().map(String::from).collect())
    }

    /// Builds from corpus tokens in id order (specials excluded).
    pub fn from_tokens(side: Side, corpus_tokens: Vec<String>) -> Result<Self, LexiconError> {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        tokens.extend(corpus_tokens);
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id).is_some() {
                return Err(LexiconError::InvalidArgument(format!("duplicate token {token:?}")));
            }
        }
        Ok(Self { side, tokens, index })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    /// Total size including the special tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distinct corpus tokens, i.e. the size without specials.
    pub fn inventory_size(&self) -> usize {
        self.tokens.len() - NUM_SPECIALS
    }

    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Unknown tokens map to UNK.
    pub fn encode(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.tokens().iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// Drops PAD/BOS/EOS; UNK and out-of-range ids render as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> TokenSequence {
        let tokens = ids
            .iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| {
                if id < NUM_SPECIALS || id >= self.tokens.len() {
                    SPECIAL_NAMES[UNK].to_string()
                } else {
                    self.tokens[id].clone()
                }
            })
            .collect();
        TokenSequence::new(tokens, self.side)
    }

    /// `id<TAB>token` per line, specials included.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# side={}", self.side)?;
        for (id, token) in self.tokens.iter().enumerate() {
            writeln!(out, "{id}\t{token}")?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut lines = text.lines().enumerate();
        let side = match lines.next() {
            Some((_, "# side=grapheme")) => Side::Grapheme,
            Some((_, "# side=phoneme")) => Side::Phoneme,
            _ => {
                return Err(LexiconError::BadManifest {
                    line: 1,
                    reason: "missing `# side=` header".into(),
                })
            }
        };
        let mut tokens = Vec::new();
        for (idx, line) in lines {
            let (id, token) = line.split_once('\t').ok_or_else(|| LexiconError::BadManifest {
                line: idx + 1,
                reason: "expected `id<TAB>token`".into(),
            })?;
            let expected = tokens.len();
            if id.parse::<usize>().ok() != Some(expected) {
                return Err(LexiconError::BadManifest {
                    line: idx + 1,
                    reason: format!("expected id {expected}"),
                });
            }
            tokens.push(token.to_string());
        }
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_NAMES {
            return Err(LexiconError::BadManifest {
                line: 2,
                reason: "special tokens missing".into(),
            });
        }
        Self::from_tokens(side, tokens.split_off(NUM_SPECIALS))
    }
}

/// A normalised word paired with its first pronunciation, tokenised.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: TokenSequence,
    pub target: TokenSequence,
}

impl Pair {
    pub fn from_entry(entry: &LexiconEntry) -> Self {
        Self {
            source: tokenize(&entry.word, Side::Grapheme),
            target: tokenize(entry.primary_pronunciation(), Side::Phoneme),
        }
    }

    pub fn word(&self) -> String {
        self.source.concat()
    }

    pub fn pronunciation(&self) -> String {
        self.target.concat()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub language_tag: String,
    pub seed: u64,
    pub train: Vec<Pair>,
    pub dev: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &Pair> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Source and target vocabularies over the whole sample.
    pub fn vocabularies(&self) -> Result<(Vocabulary, Vocabulary), LexiconError> {
        let src = Vocabulary::build(self.all().map(|p| &p.source), Side::Grapheme)?;
        let tgt = Vocabulary::build(self.all().map(|p| &p.target), Side::Phoneme)?;
        Ok((src, tgt))
    }

    /// Line-oriented replay manifest:
    /// `language_tag<TAB>seed<TAB>split<TAB>word<TAB>pronunciation`.
    pub fn write_manifest<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (name, pairs) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            for pair in pairs {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    self.language_tag,
                    self.seed,
                    name,
                    pair.word(),
                    pair.pronunciation()
                )?;
            }
        }
        Ok(())
    }

    pub fn parse_manifest(text: &str) -> Result<Self, LexiconError> {
        let mut split: Option<DatasetSplit> = None;
        for (idx, line) in text.lines().enumerate() {
            let bad = |reason: &str| LexiconError::BadManifest {
                line: idx + 1,
                reason: reason.to_string(),
            };
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [tag, seed, name, word, pron] = fields[..] else {
                return Err(bad("expected 5 tab-separated fields"));
            };
            let seed: u64 = seed.parse().map_err(|_| bad("seed is not an integer"))?;
            let split = split.get_or_insert_with(|| DatasetSplit {
                language_tag: tag.to_string(),
                seed,
                train: Vec::new(),
                dev: Vec::new(),
                test: Vec::new(),
            });
            if split.language_tag != tag || split.seed != seed {
                return Err(bad("mixed language tags or seeds"));
            }
            let pair = Pair {
                source: tokenize(word, Side::Grapheme),
                target: tokenize(pron, Side::Phoneme),
            };
            match name {
                "train" => split.train.push(pair),
                "dev" => split.dev.push(pair),
                "test" => split.test.push(pair),
                _ => return Err(bad("split must be train, dev or test")),
            }
        }
        split.ok_or(LexiconError::EmptyCorpus)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const STANDARD: SplitSizes = SplitSizes {
        train: 8000,
        dev: 1000,
        test: 1000,
    };

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self::STANDARD
    }
}

pub const STANDARD_SAMPLE_SIZE: usize = 10_000;

/// Draws `sample_size` entries uniformly without replacement and cuts the
/// (already randomly ordered) sample into train/dev/test.
///
/// The sample is a partial Fisher-Yates pass over entry indices: for
/// `i in 0..sample_size`, swap position `i` with `i + below(n - i)`.
pub fn sample_and_split(
    entries: &[LexiconEntry],
    language_tag: &str,
    seed: u64,
    sample_size: usize,
    sizes: SplitSizes,
) -> Result<DatasetSplit, LexiconError> {
    if sizes.total() != sample_size {
        return Err(LexiconError::InvalidArgument(format!(
            "split sizes sum to {} but sample size is {sample_size}",
            sizes.total()
        )));
    }
    if entries.len() < sample_size {
        return Err(LexiconError::InsufficientData {
            have: entries.len(),
            need: sample_size,
        });
    }
    let mut rng = Rng::new(seed);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    for i in 0..sample_size {
        let j = i + rng.below_usize(entries.len() - i);
        order.swap(i, j);
    }
    let pairs: Vec<Pair> = order[..sample_size].iter().map(|&i| Pair::from_entry(&entries[i])).collect();
    let mut rest = pairs.into_iter();
    let train = rest.by_ref().take(sizes.train).collect();
    let dev = rest.by_ref().take(sizes.dev).collect();
    let test = rest.collect();
    Ok(DatasetSplit {
        language_tag: language_tag.to_string(),
        seed,
        train,
        dev,
        test,
    })
}

/// Source grapheme inventory of a set of normalised entries.
pub fn source_inventory(entries: &[LexiconEntry]) -> usize {
    entries
        .iter()
        .flat_map(|e| e.word.chars())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Sizes the training set at `ceil(samples_per_char * inventory)` where the
/// inventory is taken over the full corpus; dev and test keep their sizes.
pub fn proportional_sample(
    entries: &[LexiconEntry],
    language_tag: &str,
    seed: u64,
    samples_per_char: Ratio<u64>,
    dev: usize,
    test: usize,
) -> Result<DatasetSplit, LexiconError> {
    if samples_per_char == Ratio::from_integer(0) {
        return Err(LexiconError::InvalidArgument("samples_per_char must be positive".into()));
    }
    let train = proportional_train_size(source_inventory(entries), samples_per_char);
    let sizes = SplitSizes { train, dev, test };
    sample_and_split(entries, language_tag, seed, sizes.total(), sizes)
}

pub fn proportional_train_size(inventory: usize, samples_per_char: Ratio<u64>) -> usize {
    (samples_per_char * inventory as u64).ceil().to_integer() as usize
}

/// Parses a non-negative decimal such as `88.88` into an exact ratio.
pub fn parse_decimal(text: &str) -> Result<Ratio<u64>, LexiconError> {
    let bad = || LexiconError::InvalidArgument(format!("not a decimal: {text:?}"));
    let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
        return Err(bad());
    }
    let denom = 10u64.pow(frac.len() as u32);
    let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| bad())? };
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let numer = whole.checked_mul(denom).and_then(|w| w.checked_add(frac)).ok_or_else(bad)?;
    Ok(Ratio::new(numer, denom))
}

/// Keeps entries whose word fits `max_source` tokens and whose first
/// pronunciation fits `max_target` tokens; returns how many were dropped.
pub fn retain_within(entries: &mut Vec<LexiconEntry>, max_source: usize, max_target: usize) -> usize {
    let before = entries.len();
    entries.retain(|e| {
        e.word.chars().count() <= max_source && e.primary_pronunciation().chars().count() <= max_target
    });
    before - entries.len()
}
