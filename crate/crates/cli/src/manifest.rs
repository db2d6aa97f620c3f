//! Experiment manifests: a TOML file naming the corpora, seeds, sampling
//! and any hyperparameter overrides.
//!
//! ```toml
//! [experiment]
//! id = "ipa-dict"
//! seed = 20240501
//! output_dir = "out"
//!
//! [train]
//! epochs = 20
//!
//! [languages.eo]
//! path = "data/eo.txt"
//!
//! [languages.es_ES]
//! path = "data/es_ES.txt"
//! sampling = "proportional"
//! samples_per_char = "250"
//! ```
//!
//! Relative paths resolve against the manifest's directory. The output root
//! can be overridden with the `G2P_OUT_ROOT` environment variable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use g2p_core::complexity::{language_info, OrthographyType};
use g2p_core::lexicon::{parse_decimal, SplitSizes, STANDARD_SAMPLE_SIZE};
use g2p_core::rng::derive_seed;
use g2p_core::{ModelConfig, TrainConfig};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OUT_ROOT_ENV: &str = "G2P_OUT_ROOT";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid manifest {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("language {tag}: {message}")]
    Language { tag: String, message: String },
    #[error("language {tag}: data file {path} is not readable: {source}")]
    MissingData {
        tag: String,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown language {0:?} (not in the manifest)")]
    UnknownLanguage(String),
    #[error("manifest lists no languages")]
    NoLanguages,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub id: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Corpora with fewer normalised records are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_records: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub embedding_dim: Option<usize>,
    pub num_layers: Option<usize>,
    pub ff_size: Option<usize>,
    pub attention_size: Option<usize>,
    pub num_heads: Option<usize>,
    pub dropout: Option<f64>,
    pub max_seq_len: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub gradient_clip: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Fixed,
    Proportional,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageSection {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingMode>,
    /// Decimal string, e.g. `"88.88"`; required for proportional sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_char: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orthography: Option<OrthographyType>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub languages: BTreeMap<String, LanguageSection>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sampling {
    Fixed { sample_size: usize, sizes: SplitSizes },
    Proportional { samples_per_char: Ratio<u64>, dev: usize, test: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageSpec {
    pub tag: String,
    pub path: PathBuf,
    pub seed: u64,
    pub sampling: Sampling,
    pub orthography: OrthographyType,
}

/// A validated manifest with every default filled in.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub id: String,
    pub seed: u64,
    pub output_root: PathBuf,
    pub min_records: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub languages: Vec<LanguageSpec>,
}

impl Manifest {
    /// Reads and validates `path`. `seed_override` replaces the global seed
    /// (per-language seeds given explicitly are kept).
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ManifestFile = toml::from_str(&text).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out_env = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from);
        Self::from_file(file, &base, seed_override, out_env)
    }

    pub fn from_file(
        file: ManifestFile,
        base: &Path,
        seed_override: Option<u64>,
        out_root_override: Option<PathBuf>,
    ) -> Result<Self, ManifestError> {
        let seed = seed_override.unwrap_or(file.experiment.seed);
        if file.languages.is_empty() {
            return Err(ManifestError::NoLanguages);
        }
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let output_root = out_root_override
            .unwrap_or_else(|| resolve(file.experiment.output_dir.as_deref().unwrap_or(Path::new("out"))));

        let m = &file.model;
        let mut model = ModelConfig::standard(0, 0);
        model.embedding_dim = m.embedding_dim.unwrap_or(model.embedding_dim);
        model.num_layers = m.num_layers.unwrap_or(model.num_layers);
        model.ff_size = m.ff_size.unwrap_or(model.ff_size);
        model.attention_size = m.attention_size.unwrap_or(model.attention_size);
        model.num_heads = m.num_heads.unwrap_or(model.num_heads);
        model.dropout = m.dropout.unwrap_or(model.dropout);
        model.max_seq_len = m.max_seq_len.unwrap_or(model.max_seq_len);
        // vocabulary sizes are only known after preparation
        model
            .clone()
            .with_vocab_sizes(1, 1)
            .validate()
            .map_err(|e| ManifestError::Parse {
                path: base.to_path_buf(),
                message: e.to_string(),
            })?;

        let t = &file.train;
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(defaults.learning_rate),
            batch_size: t.batch_size.unwrap_or(defaults.batch_size),
            epochs: t.epochs.unwrap_or(defaults.epochs),
            gradient_clip: t.gradient_clip,
            ..defaults
        };
        if train.batch_size == 0 || train.learning_rate.is_nan() || train.learning_rate <= 0.0 {
            return Err(ManifestError::Parse {
                path: base.to_path_buf(),
                message: "batch_size and learning_rate must be positive".into(),
            });
        }

        let mut languages = Vec::with_capacity(file.languages.len());
        for (tag, section) in &file.languages {
            languages.push(language_spec(tag, section, seed, &resolve)?);
        }
        Ok(Self {
            id: file.experiment.id,
            seed,
            output_root,
            min_records: file.experiment.min_records.unwrap_or(STANDARD_SAMPLE_SIZE),
            model,
            train,
            languages,
        })
    }

    /// Languages named in `filter` (all when empty), in manifest order.
    pub fn select(&self, filter: &[String]) -> Result<Vec<&LanguageSpec>, ManifestError> {
        if let Some(unknown) = filter.iter().find(|t| !self.languages.iter().any(|l| &l.tag == *t)) {
            return Err(ManifestError::UnknownLanguage(unknown.clone()));
        }
        Ok(self
            .languages
            .iter()
            .filter(|l| filter.is_empty() || filter.contains(&l.tag))
            .collect())
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_root.join(&self.id)
    }

    pub fn language_dir(&self, tag: &str) -> PathBuf {
        self.experiment_dir().join(tag)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.experiment_dir().join("report")
    }
}

fn language_spec(
    tag: &str,
    s: &LanguageSection,
    global_seed: u64,
    resolve: &dyn Fn(&Path) -> PathBuf,
) -> Result<LanguageSpec, ManifestError> {
    let err = |message: String| ManifestError::Language {
        tag: tag.to_string(),
        message,
    };
    if tag.is_empty() || tag.contains(['/', '\\']) || tag == "report" || tag.starts_with('.') {
        return Err(err("tag must be a plain directory name other than `report`".into()));
    }
    let path = resolve(&s.path);
    fs::File::open(&path).map_err(|source| ManifestError::MissingData {
        tag: tag.to_string(),
        path: path.clone(),
        source,
    })?;
    let standard = SplitSizes::STANDARD;
    let dev = s.dev.unwrap_or(standard.dev);
    let test = s.test.unwrap_or(standard.test);
    let sampling = match s.sampling.unwrap_or_default() {
        SamplingMode::Fixed => {
            if s.samples_per_char.is_some() {
                return Err(err("samples_per_char requires sampling = \"proportional\"".into()));
            }
            let sample_size = s.sample_size.unwrap_or(STANDARD_SAMPLE_SIZE);
            let train = match s.train {
                Some(train) => train,
                None => sample_size
                    .checked_sub(dev + test)
                    .ok_or_else(|| err(format!("dev + test exceed sample_size {sample_size}")))?,
            };
            let sizes = SplitSizes { train, dev, test };
            if sizes.total() != sample_size {
                return Err(err(format!(
                    "train + dev + test = {} but sample_size = {sample_size}",
                    sizes.total()
                )));
            }
            if train == 0 {
                return Err(err("training split would be empty".into()));
            }
            Sampling::Fixed { sample_size, sizes }
        }
        SamplingMode::Proportional => {
            if s.sample_size.is_some() || s.train.is_some() {
                return Err(err("proportional sampling derives the sizes; drop sample_size/train".into()));
            }
            let text = s
                .samples_per_char
                .as_deref()
                .ok_or_else(|| err("proportional sampling needs samples_per_char".into()))?;
            let samples_per_char = parse_decimal(text).map_err(|e| err(e.to_string()))?;
            if samples_per_char == Ratio::from_integer(0) {
                return Err(err("samples_per_char must be positive".into()));
            }
            Sampling::Proportional {
                samples_per_char,
                dev,
                test,
            }
        }
    };
    Ok(LanguageSpec {
        tag: tag.to_string(),
        path,
        seed: s.seed.unwrap_or_else(|| derive_seed(global_seed, tag)),
        sampling,
        orthography: s.orthography.unwrap_or_else(|| OrthographyType::for_tag(tag)),
    })
}

/// Builds a manifest listing every `<tag>.txt` / `<tag>.tsv` file in `dir`.
/// With `published_only`, only tags with published results are kept.
pub fn init_from_dir(dir: &Path, id: &str, seed: u64, published_only: bool) -> std::io::Result<ManifestFile> {
    let mut languages = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_corpus = path.is_file() && matches!(path.extension().and_then(|e| e.to_str()), Some("txt" | "tsv"));
        let Some(tag) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if !is_corpus || (published_only && language_info(tag).is_none()) {
            continue;
        }
        let abs = fs::canonicalize(&path).unwrap_or(path.clone());
        languages.insert(
            tag.to_string(),
            LanguageSection {
                path: abs,
                ..LanguageSection::default()
            },
        );
    }
    Ok(ManifestFile {
        experiment: ExperimentSection {
            id: id.to_string(),
            seed,
            output_dir: Some(PathBuf::from("out")),
            min_records: None,
        },
        languages,
        ..ManifestFile::default()
    })
}

pub fn to_toml(file: &ManifestFile) -> String {
    toml::to_string_pretty(file).expect("manifest serialises")
}
