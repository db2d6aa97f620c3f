//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use g2p_core::evaluation::Denominator;
use rayon::prelude::*;

use crate::manifest::{self, LanguageSpec, Manifest};
use crate::pipeline::{self, Outcome, PipelineError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "g2p-complexity", version, about = "Grapheme-to-phoneme complexity experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment manifest (TOML).
    #[arg(long, default_value = "g2p.toml")]
    pub manifest: PathBuf,
    /// Restrict to these language tags (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub lang: Vec<String>,
    /// Languages processed concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub parallel: u16,
    /// Replace the manifest's global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Redo stages whose outputs already exist.
    #[arg(long)]
    pub force: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, Default)]
pub enum DenominatorArg {
    /// Longer of prediction and gold.
    #[default]
    Max,
    /// Gold length.
    Gold,
}

impl From<DenominatorArg> for Denominator {
    fn from(d: DenominatorArg) -> Self {
        match d {
            DenominatorArg::Max => Denominator::Max,
            DenominatorArg::Gold => Denominator::Gold,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse, normalise, sample and split each corpus; write vocabularies.
    Prepare(Common),
    /// Train one model per prepared language.
    Train(Common),
    /// Greedy-decode each test set and score it.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Item accuracy denominator.
        #[arg(long, value_enum, default_value_t)]
        denominator: DenominatorArg,
    },
    /// Write the complexity tables and the scatter plot.
    Report {
        #[command(flatten)]
        common: Common,
        /// Print per-language deltas and rank correlation against the
        /// published results.
        #[arg(long)]
        compare: bool,
    },
    /// prepare, train, evaluate and report in sequence.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t)]
        denominator: DenominatorArg,
        /// Print the comparison against the published results after the
        /// report.
        #[arg(long)]
        compare: bool,
    },
    /// Manifest helpers.
    #[command(subcommand)]
    Manifest(ManifestCommand),
}

#[derive(Subcommand, Debug)]
pub enum ManifestCommand {
    /// Write a manifest listing every `<tag>.txt` corpus in a directory.
    Init {
        #[arg(long)]
        from_dir: PathBuf,
        #[arg(long, default_value = "g2p.toml")]
        output: PathBuf,
        #[arg(long, default_value = "g2p")]
        id: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only languages with published results.
        #[arg(long)]
        published_only: bool,
        /// Overwrite an existing manifest.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Clone, Copy)]
enum Stage {
    Prepare,
    Train,
    Evaluate(Denominator),
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Evaluate(_) => "evaluate",
        }
    }

    fn run(self, m: &Manifest, lang: &LanguageSpec, force: bool) -> Result<Outcome, PipelineError> {
        match self {
            Stage::Prepare => pipeline::prepare(m, lang, force),
            Stage::Train => pipeline::train(m, lang, force),
            Stage::Evaluate(d) => pipeline::evaluate_language(m, lang, d, force),
        }
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Manifest(ManifestCommand::Init {
            from_dir,
            output,
            id,
            seed,
            published_only,
            force,
        }) => init_manifest(&from_dir, &output, &id, seed, published_only, force),
        Command::Prepare(c) => with_manifest(&c, |m, langs| run_stage(m, langs, &c, Stage::Prepare)),
        Command::Train(c) => with_manifest(&c, |m, langs| run_stage(m, langs, &c, Stage::Train)),
        Command::Evaluate { common, denominator } => with_manifest(&common, |m, langs| {
            run_stage(m, langs, &common, Stage::Evaluate(denominator.into()))
        }),
        Command::Report { common, compare } => with_manifest(&common, |m, langs| run_report(m, langs, compare)),
        Command::RunAll {
            common,
            denominator,
            compare,
        } => with_manifest(&common, |m, langs| {
            let mut status = EXIT_OK;
            for stage in [Stage::Prepare, Stage::Train, Stage::Evaluate(denominator.into())] {
                status = status.max(run_stage(m, langs, &common, stage));
            }
            status.max(run_report(m, langs, compare))
        }),
    }
}

fn init_manifest(dir: &std::path::Path, output: &std::path::Path, id: &str, seed: u64, published_only: bool, force: bool) -> i32 {
    if output.exists() && !force {
        eprintln!("error: {} exists (use --force to overwrite)", output.display());
        return EXIT_INVALID;
    }
    let file = match manifest::init_from_dir(dir, id, seed, published_only) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot scan {}: {e}", dir.display());
            return EXIT_INVALID;
        }
    };
    if file.languages.is_empty() {
        eprintln!("error: no <tag>.txt or <tag>.tsv corpora in {}", dir.display());
        return EXIT_INVALID;
    }
    if let Err(e) = fs::write(output, manifest::to_toml(&file)) {
        eprintln!("error: cannot write {}: {e}", output.display());
        return EXIT_PARTIAL;
    }
    println!("wrote {} with {} languages", output.display(), file.languages.len());
    EXIT_OK
}

fn with_manifest(c: &Common, f: impl FnOnce(&Manifest, &[&LanguageSpec]) -> i32) -> i32 {
    let manifest = match Manifest::load(&c.manifest, c.seed) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let langs = match manifest.select(&c.lang) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    f(&manifest, &langs)
}

/// Runs one stage for every language on a pool of `--parallel` workers and
/// prints one status line per language, in manifest order.
fn run_stage(m: &Manifest, langs: &[&LanguageSpec], c: &Common, stage: Stage) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(usize::from(c.parallel)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_PARTIAL;
        }
    };
    let results: Vec<Result<Outcome, PipelineError>> =
        pool.install(|| langs.par_iter().map(|lang| stage.run(m, lang, c.force)).collect());
    let mut status = EXIT_OK;
    for (lang, result) in langs.iter().zip(results) {
        match result {
            Ok(Outcome::Done(msg)) => println!("{}\t{}\tok\t{msg}", stage.name(), lang.tag),
            Ok(Outcome::UpToDate) => println!("{}\t{}\tup-to-date", stage.name(), lang.tag),
            Ok(Outcome::Skipped(why)) => println!("{}\t{}\tskipped\t{why}", stage.name(), lang.tag),
            Err(e @ (PipelineError::MissingSplit(_) | PipelineError::MissingCheckpoint(_))) if skipped_earlier(m, lang) => {
                log::debug!("{}: {e}", lang.tag);
                println!("{}\t{}\tskipped\trejected by prepare", stage.name(), lang.tag);
            }
            Err(e) => {
                println!("{}\t{}\tfailed\t{e}", stage.name(), lang.tag);
                status = EXIT_PARTIAL;
            }
        }
    }
    status
}

/// Later stages pass over a language that `prepare` rejected instead of
/// failing on it.
fn skipped_earlier(m: &Manifest, lang: &LanguageSpec) -> bool {
    m.language_dir(&lang.tag).join(pipeline::SKIPPED).exists()
}

fn run_report(m: &Manifest, langs: &[&LanguageSpec], compare: bool) -> i32 {
    match pipeline::report(m, langs) {
        Ok(out) => {
            for f in &out.files {
                println!("report\twrote\t{}", f.display());
            }
            for tag in &out.missing {
                println!("report\t{tag}\tmissing\tno evaluation results");
            }
            if compare {
                print!("{}", out.comparison);
            }
            // languages skipped at preparation are expected to be absent
            let unexpected = out
                .missing
                .iter()
                .filter(|t| langs.iter().any(|l| &l.tag == *t && !skipped_earlier(m, l)))
                .count();
            if unexpected > 0 {
                EXIT_PARTIAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PARTIAL
        }
    }
}
