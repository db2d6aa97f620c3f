//! Per-language complexity statistics, report tables and the scatter plot.
//!
//! Ratios are kept as exact rationals and rounded only when rendered, so the
//! tables are byte-stable across platforms.

use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::Path;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalResult;

#[derive(Debug, Error)]
pub enum ComplexityError {
    #[error("{0}: source inventory is empty")]
    ZeroInventory(String),
    #[error("training size must be positive")]
    ZeroTrainSize,
    #[error("no records to report")]
    EmptyRecords,
    #[error("rank correlation needs equal-length inputs, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("rank correlation needs at least two non-constant values")]
    Degenerate,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrthographyType {
    Latin,
    Logographic,
    Abugida,
    Abjad,
    Other,
}

impl OrthographyType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Latin => "latin",
            Self::Logographic => "logographic",
            Self::Abugida => "abugida",
            Self::Abjad => "abjad",
            Self::Other => "other",
        }
    }

    /// Default label for a language tag; unknown tags are `Other`.
    pub fn for_tag(tag: &str) -> Self {
        LANGUAGES.iter().find(|l| l.tag == tag).map_or(Self::Other, |l| l.orthography)
    }
}

impl fmt::Display for OrthographyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OrthographyType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "latin" => Ok(Self::Latin),
            "logographic" => Ok(Self::Logographic),
            "abugida" => Ok(Self::Abugida),
            "abjad" => Ok(Self::Abjad),
            "other" => Ok(Self::Other),
            _ => Err(format!("unknown orthography type {s:?}")),
        }
    }
}

/// A known language with its published results.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LanguageInfo {
    pub tag: &'static str,
    pub name: &'static str,
    pub orthography: OrthographyType,
    /// Published accuracy in percent.
    pub accuracy_percent: f64,
    pub ipa_vocab_len: u64,
    pub source_vocab_len: u64,
}

macro_rules! lang {
    ($tag:literal, $name:literal, $orth:ident, $acc:literal, $ipa:literal, $src:literal) => {
        LanguageInfo {
            tag: $tag,
            name: $name,
            orthography: OrthographyType::$orth,
            accuracy_percent: $acc,
            ipa_vocab_len: $ipa,
            source_vocab_len: $src,
        }
    };
}

/// The 22 published languages, in the order of the original results table.
pub const LANGUAGES: [LanguageInfo; 22] = [
    lang!("zh_hant", "Mandarin (hant)", Logographic, 71.98, 41, 23283),
    lang!("zh_hans", "Mandarin (hans)", Logographic, 73.88, 41, 20505),
    lang!("yue", "Cantonese", Logographic, 79.95, 33, 14672),
    lang!("ja", "Japanese", Logographic, 73.66, 32, 5510),
    lang!("vi_S", "Vietnamese (Southern)", Latin, 95.53, 43, 90),
    lang!("vi_N", "Vietnamese (Northern)", Latin, 95.65, 43, 90),
    lang!("vi_C", "Vietnamese (Central)", Latin, 96.32, 45, 90),
    lang!("or", "Odia", Abugida, 95.00, 38, 63),
    lang!("ar", "Arabic", Abjad, 87.10, 32, 38),
    lang!("eo", "Esperanto", Latin, 97.08, 27, 29),
    lang!("fr_FR", "French (France)", Latin, 92.12, 43, 46),
    lang!("es_MX", "Spanish (Mexico)", Latin, 95.68, 32, 33),
    lang!("es_ES", "Spanish (Spain)", Latin, 94.85, 33, 33),
    lang!("ma", "Malay", Latin, 96.87, 30, 27),
    lang!("fi", "Finnish", Latin, 91.81, 38, 34),
    lang!("fr_QC", "French (Quebec)", Latin, 90.80, 54, 47),
    lang!("nb", "Norwegian", Latin, 84.74, 48, 34),
    lang!("en_US", "English (US)", Latin, 80.30, 37, 26),
    lang!("sv", "Swedish", Latin, 85.42, 48, 33),
    lang!("sw", "Swahili", Latin, 96.63, 40, 24),
    lang!("en_UK", "English (UK)", Latin, 83.92, 47, 26),
    lang!("de", "German", Latin, 85.55, 84, 32),
];

pub fn language_info(tag: &str) -> Option<&'static LanguageInfo> {
    LANGUAGES.iter().find(|l| l.tag == tag)
}

/// Training pairs per language in the standard protocol.
pub const STANDARD_TRAIN_SIZE: u64 = 8000;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityRecord {
    pub language_tag: String,
    pub orthography_type: OrthographyType,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub ipa_vocab_len: u64,
    pub source_vocab_len: u64,
    pub train_size: u64,
    pub ratio: Ratio<u64>,
    pub distance_from_unity: Ratio<u64>,
    pub samples_per_char: Ratio<u64>,
}

pub fn compute_record(
    language_tag: &str,
    orthography_type: OrthographyType,
    ipa_vocab_len: u64,
    source_vocab_len: u64,
    accuracy: f64,
    train_size: u64,
) -> Result<ComplexityRecord, ComplexityError> {
    if source_vocab_len == 0 {
        return Err(ComplexityError::ZeroInventory(language_tag.to_string()));
    }
    if train_size == 0 {
        return Err(ComplexityError::ZeroTrainSize);
    }
    let ratio = Ratio::new(ipa_vocab_len, source_vocab_len);
    let one = Ratio::from_integer(1);
    let distance_from_unity = if ratio >= one { ratio - one } else { one - ratio };
    Ok(ComplexityRecord {
        language_tag: language_tag.to_string(),
        orthography_type,
        accuracy,
        ipa_vocab_len,
        source_vocab_len,
        train_size,
        ratio,
        distance_from_unity,
        samples_per_char: Ratio::new(train_size, source_vocab_len),
    })
}

impl ComplexityRecord {
    pub fn from_eval(
        orthography_type: OrthographyType,
        ipa_vocab_len: u64,
        source_vocab_len: u64,
        eval: &EvalResult,
        train_size: u64,
    ) -> Result<Self, ComplexityError> {
        compute_record(
            &eval.language_tag,
            orthography_type,
            ipa_vocab_len,
            source_vocab_len,
            eval.char_accuracy,
            train_size,
        )
    }

    pub fn ratio_cell(&self) -> String {
        render_half_up(self.ratio, 3)
    }

    pub fn distance_cell(&self) -> String {
        render_half_up(self.distance_from_unity, 2)
    }

    pub fn samples_cell(&self) -> String {
        render_truncated(self.samples_per_char, 2)
    }

    pub fn display_name(&self) -> &str {
        language_info(&self.language_tag).map_or(&self.language_tag, |l| l.name)
    }
}

fn scaled(r: Ratio<u64>, places: u32) -> (u128, u128) {
    (u128::from(*r.numer()) * 10u128.pow(places), u128::from(*r.denom()))
}

fn fixed(units: u128, places: u32) -> String {
    if places == 0 {
        return units.to_string();
    }
    let base = 10u128.pow(places);
    format!("{}.{:0width$}", units / base, units % base, width = places as usize)
}

/// Rounds half away from zero to `places` decimals and prints all of them.
pub fn render_half_up(r: Ratio<u64>, places: u32) -> String {
    let (n, d) = scaled(r, places);
    fixed((2 * n + d) / (2 * d), places)
}

/// Truncates to `places` decimals, then drops trailing zeros and a bare
/// decimal point (`250.00` prints as `250`).
pub fn render_truncated(r: Ratio<u64>, places: u32) -> String {
    let (n, d) = scaled(r, places);
    let text = fixed(n / d, places);
    if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    }
}

pub fn render_accuracy(accuracy: f64) -> String {
    format!("{:.2}%", accuracy * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    /// Accuracy, inventories and their ratio.
    Inventories,
    /// Orthography type and samples per source character.
    Sparsity,
}

impl Table {
    pub fn header(self) -> &'static str {
        match self {
            Table::Inventories => "language\taccuracy\tipa_vocab_len\tsource_vocab_len\tratio\tdistance_from_1_1",
            Table::Sparsity => "language\torthography_type\taccuracy\tunique_chars\tsamples_per_unique_char",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Table::Inventories => "table2.tsv",
            Table::Sparsity => "table3.tsv",
        }
    }
}

/// Records in table order: ascending ratio for the inventory table and
/// ascending samples per character for the sparsity table, ties by tag.
pub fn sorted(records: &[ComplexityRecord], which: Table) -> Vec<&ComplexityRecord> {
    let mut out: Vec<&ComplexityRecord> = records.iter().collect();
    out.sort_by(|a, b| {
        let key = match which {
            Table::Inventories => a.ratio.cmp(&b.ratio),
            Table::Sparsity => a.samples_per_char.cmp(&b.samples_per_char),
        };
        key.then_with(|| a.language_tag.cmp(&b.language_tag))
    });
    out
}

pub fn render_table(records: &[ComplexityRecord], which: Table) -> Result<String, ComplexityError> {
    if records.is_empty() {
        return Err(ComplexityError::EmptyRecords);
    }
    let mut out = String::new();
    out.push_str(which.header());
    out.push('\n');
    for r in sorted(records, which) {
        let row = match which {
            Table::Inventories => format!(
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.language_tag,
                render_accuracy(r.accuracy),
                r.ipa_vocab_len,
                r.source_vocab_len,
                r.ratio_cell(),
                r.distance_cell()
            ),
            Table::Sparsity => format!(
                "{}\t{}\t{}\t{}\t{}",
                r.language_tag,
                r.orthography_type,
                render_accuracy(r.accuracy),
                r.source_vocab_len,
                r.samples_cell()
            ),
        };
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

/// Writes a table; nothing is created when `records` is empty.
pub fn emit_table(records: &[ComplexityRecord], which: Table, path: &Path) -> Result<(), ComplexityError> {
    let text = render_table(records, which)?;
    fs::write(path, text)?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).max(1e-3);
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// Accuracy against grapheme-to-phoneme ratio, one labelled circle per
/// language, with a single vertical reference line at ratio 1.
pub fn render_scatter(records: &[ComplexityRecord]) -> Result<String, ComplexityError> {
    if records.is_empty() {
        return Err(ComplexityError::EmptyRecords);
    }
    let ratios: Vec<f64> = records.iter().map(|r| r.ratio.to_f64().unwrap_or(0.0)).collect();
    let accs: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let fold = |v: &[f64], init: f64, f: fn(f64, f64) -> f64| v.iter().copied().fold(init, f);
    let (x0, x1) = padded_range(fold(&ratios, 1.0, f64::min), fold(&ratios, 1.0, f64::max));
    let (y0, y1) = padded_range(fold(&accs, f64::INFINITY, f64::min), fold(&accs, f64::NEG_INFINITY, f64::max));
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (WIDTH - LEFT - RIGHT);
    let py = |y: f64| HEIGHT - BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM);
    let (left, right, top, bottom) = (px(x0), px(x1), py(y1), py(y0));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut axis = format!("M{left:.2},{top:.2} L{left:.2},{bottom:.2} L{right:.2},{bottom:.2}");
    let mut tick_text = String::new();
    for t in ticks(x0, x1) {
        let x = px(t);
        let _ = write!(axis, " M{x:.2},{bottom:.2} L{x:.2},{:.2}", bottom + 5.0);
        let _ = writeln!(
            tick_text,
            r#"<text class="tick" x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 18.0,
            trim_float(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = py(t);
        let _ = write!(axis, " M{left:.2},{y:.2} L{:.2},{y:.2}", left - 5.0);
        let _ = writeln!(
            tick_text,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + 4.0,
            trim_float(t * 100.0)
        );
    }
    let _ = writeln!(svg, r#"<path class="axis" d="{axis}" stroke="black" fill="none"/>"#);
    svg.push_str(&tick_text);
    let _ = writeln!(
        svg,
        r#"<text class="axis-title" x="{:.2}" y="{:.2}" text-anchor="middle">Ratio of IPA to source alphabet length</text>"#,
        (left + right) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text class="axis-title" transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">Accuracy (%)</text>"#,
        (top + bottom) / 2.0
    );
    let xr = px(1.0);
    let _ = writeln!(
        svg,
        r#"<line class="reference" x1="{xr:.2}" y1="{top:.2}" x2="{xr:.2}" y2="{bottom:.2}" stroke="blue" stroke-width="1.5"/>"#
    );
    let _ = writeln!(svg, r#"<g class="points">"#);
    for (r, (&x, &y)) in records.iter().zip(ratios.iter().zip(&accs)) {
        let (cx, cy) = (px(x), py(y));
        let name = xml_escape(r.display_name());
        let _ = writeln!(
            svg,
            r#"<circle class="point" cx="{cx:.2}" cy="{cy:.2}" r="4" fill="black"><title>{name}</title></circle>"#
        );
        let _ = writeln!(
            svg,
            r#"<text class="label" x="{:.2}" y="{:.2}">{name}</text>"#,
            cx + 6.0,
            cy - 6.0
        );
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

fn trim_float(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn emit_scatter(records: &[ComplexityRecord], path: &Path) -> Result<(), ComplexityError> {
    let svg = render_scatter(records)?;
    fs::write(path, svg)?;
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<f64, ComplexityError> {
    if a.len() != b.len() {
        return Err(ComplexityError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(ComplexityError::Degenerate);
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va.is_zero() || vb.is_zero() {
        return Err(ComplexityError::Degenerate);
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub language_tag: String,
    /// Reproduced and published accuracy, both as fractions.
    pub ours: f64,
    pub published: f64,
}

impl ComparisonRow {
    pub fn delta_points(&self) -> f64 {
        (self.ours - self.published) * 100.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Languages in the run without a published result.
    pub unmatched: Vec<String>,
    /// `None` with fewer than two matched languages.
    pub spearman: Option<f64>,
    pub logographic_mean: Option<f64>,
    pub latin_mean: Option<f64>,
}

/// Compares accuracies against the published results.
pub fn compare_with_published(records: &[ComplexityRecord]) -> Comparison {
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for r in sorted(records, Table::Inventories) {
        match language_info(&r.language_tag) {
            Some(info) => rows.push(ComparisonRow {
                language_tag: r.language_tag.clone(),
                ours: r.accuracy,
                published: info.accuracy_percent / 100.0,
            }),
            None => unmatched.push(r.language_tag.clone()),
        }
    }
    let ours: Vec<f64> = rows.iter().map(|r| r.ours).collect();
    let published: Vec<f64> = rows.iter().map(|r| r.published).collect();
    let group_mean = |kind: OrthographyType| {
        let v: Vec<f64> = records.iter().filter(|r| r.orthography_type == kind).map(|r| r.accuracy).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Comparison {
        spearman: rank_correlation(&ours, &published).ok(),
        rows,
        unmatched,
        logographic_mean: group_mean(OrthographyType::Logographic),
        latin_mean: group_mean(OrthographyType::Latin),
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "language\tours\tpublished\tdelta_points")?;
        for r in &self.rows {
            writeln!(
                f,
                "{}\t{}\t{}\t{:+.2}",
                r.language_tag,
                render_accuracy(r.ours),
                render_accuracy(r.published),
                r.delta_points()
            )?;
        }
        for tag in &self.unmatched {
            writeln!(f, "{tag}\t-\t-\tno published result")?;
        }
        match self.spearman {
            Some(rho) => writeln!(f, "spearman\t{rho:.4}\t(n={})", self.rows.len())?,
            None => writeln!(f, "spearman\tn/a\t(n={})", self.rows.len())?,
        }
        if let (Some(logo), Some(latin)) = (self.logographic_mean, self.latin_mean) {
            writeln!(
                f,
                "logographic_mean\t{}\tlatin_mean\t{}\tgap_points\t{:.2}",
                render_accuracy(logo),
                render_accuracy(latin),
                (latin - logo) * 100.0
            )?;
        }
        Ok(())
    }
}

/// Records built from the published inventories and accuracies.
pub fn published_records() -> Vec<ComplexityRecord> {
    LANGUAGES
        .iter()
        .map(|l| {
            compute_record(
                l.tag,
                l.orthography,
                l.ipa_vocab_len,
                l.source_vocab_len,
                l.accuracy_percent / 100.0,
                STANDARD_TRAIN_SIZE,
            )
            .expect("published inventories are positive")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tag: &str, ipa: u64, src: u64) -> ComplexityRecord {
        compute_record(tag, OrthographyType::for_tag(tag), ipa, src, 0.9, 8000).unwrap()
    }

    #[test]
    fn record_examples() {
        let de = rec("de", 84, 32);
        assert_eq!((de.ratio_cell(), de.distance_cell()), ("2.625".into(), "1.63".into()));
        assert_eq!(rec("zh_hant", 41, 23283).samples_cell(), "0.34");
        let es = rec("es_ES", 33, 33);
        assert_eq!((es.ratio_cell(), es.distance_cell()), ("1.000".into(), "0.00".into()));
        assert!(matches!(
            compute_record("xx", OrthographyType::Other, 3, 0, 0.5, 8000),
            Err(ComplexityError::ZeroInventory(_))
        ));
    }

    #[test]
    fn exact_rational_invariants() {
        for r in published_records() {
            let one = Ratio::from_integer(1u64);
            let d = if r.ratio > one { r.ratio - one } else { one - r.ratio };
            assert_eq!(r.distance_from_unity, d);
            assert_eq!(r.samples_per_char * r.source_vocab_len, Ratio::from_integer(r.train_size));
        }
    }

    #[test]
    fn renderers() {
        assert_eq!(render_half_up(Ratio::new(1, 8), 2), "0.13");
        assert_eq!(render_half_up(Ratio::new(1, 2), 0), "1");
        assert_eq!(render_half_up(Ratio::new(5, 1), 3), "5.000");
        assert_eq!(render_truncated(Ratio::new(8000, 32), 2), "250");
        assert_eq!(render_truncated(Ratio::new(8000, 90), 2), "88.88");
        assert_eq!(render_truncated(Ratio::new(1, 10), 2), "0.1");
        assert_eq!(render_truncated(Ratio::new(0, 10), 2), "0");
    }

    #[test]
    fn orthography_table() {
        assert_eq!(OrthographyType::for_tag("ja"), OrthographyType::Logographic);
        assert_eq!(OrthographyType::for_tag("or"), OrthographyType::Abugida);
        assert_eq!(OrthographyType::for_tag("ar"), OrthographyType::Abjad);
        assert_eq!(OrthographyType::for_tag("de"), OrthographyType::Latin);
        assert_eq!(OrthographyType::for_tag("ko"), OrthographyType::Other);
        assert_eq!("Abjad".parse::<OrthographyType>().unwrap(), OrthographyType::Abjad);
    }

    #[test]
    fn tables_have_schema_and_order() {
        assert!(matches!(render_table(&[], Table::Inventories), Err(ComplexityError::EmptyRecords)));
        let one = render_table(&[rec("eo", 27, 29)], Table::Inventories).unwrap();
        assert_eq!(
            one,
            "language\taccuracy\tipa_vocab_len\tsource_vocab_len\tratio\tdistance_from_1_1\neo\t90.00%\t27\t29\t0.931\t0.07\n"
        );
        let records = published_records();
        let t2 = render_table(&records, Table::Inventories).unwrap();
        let first: Vec<&str> = t2.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(first.len(), 22);
        assert_eq!(&first[..4], &["zh_hant", "zh_hans", "yue", "ja"]);
        assert_eq!(first[21], "de");
        let t3 = render_table(&records, Table::Sparsity).unwrap();
        let last = t3.lines().last().unwrap();
        assert_eq!(last, "sw\tlatin\t96.63%\t24\t333.33");
    }

    #[test]
    fn emit_table_creates_nothing_for_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsv");
        assert!(emit_table(&[], Table::Sparsity, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn scatter_is_well_formed_with_reference_line() {
        let mut records = published_records();
        records[0].language_tag = "x<&>".into();
        let svg = render_scatter(&records).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let count = |name: &str, class: &str| {
            doc.descendants()
                .filter(|n| n.has_tag_name(name) && n.attribute("class") == Some(class))
                .count()
        };
        assert_eq!(count("circle", "point"), 22);
        assert_eq!(count("text", "label"), 22);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("line")).count(), 1);
        assert!(doc.descendants().any(|n| n.text() == Some("x<&>")));
    }

    #[test]
    fn reference_line_stays_inside_axes() {
        let records = vec![rec("zh_hant", 41, 23283), rec("ja", 32, 5510)];
        let svg = render_scatter(&records).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let line = doc.descendants().find(|n| n.has_tag_name("line")).unwrap();
        let x: f64 = line.attribute("x1").unwrap().parse().unwrap();
        assert!(x > LEFT && x < WIDTH - RIGHT, "{x}");
    }

    /// Independent oracle: ranks by counting, then textbook Pearson.
    fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    let below = v.iter().filter(|&&y| y < x).count() as f64;
                    let equal = v.iter().filter(|&&y| y == x).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let num = n * dot(&ra, &rb) - sum(&ra) * sum(&rb);
        let den = ((n * dot(&ra, &ra) - sum(&ra).powi(2)) * (n * dot(&rb, &rb) - sum(&rb).powi(2))).sqrt();
        num / den
    }

    #[test]
    fn spearman_examples() {
        let a = [0.1, 0.5, 0.3, 0.9];
        assert!((rank_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let rev = [0.9, 0.1, 0.3, -1.0];
        assert!((rank_correlation(&a, &rev).unwrap() + 1.0).abs() < 1e-15);
        let x = [1.0, 2.0, 2.0, 4.0, 5.0];
        let y = [2.0, 1.0, 4.0, 3.0, 5.0];
        assert!((rank_correlation(&x, &y).unwrap() - spearman_oracle(&x, &y)).abs() < 1e-12);
        assert!(matches!(rank_correlation(&x, &y[..4]), Err(ComplexityError::LengthMismatch(5, 4))));
        assert!(matches!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]), Err(ComplexityError::Degenerate)));
    }

    #[test]
    fn comparison_against_itself() {
        let c = compare_with_published(&published_records());
        assert_eq!(c.rows.len(), 22);
        assert!((c.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert!(c.rows.iter().all(|r| r.delta_points().abs() < 1e-9));
        let gap = c.latin_mean.unwrap() - c.logographic_mean.unwrap();
        assert!(gap > 0.10, "{gap}");
        assert!(c.to_string().contains("spearman\t1.0000"));
    }
}
