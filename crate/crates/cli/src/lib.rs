//! Orchestration for the grapheme-to-phoneme complexity experiments:
//! manifest handling, the per-language pipeline and the command line.
//!
//! Every language's artifacts live under `<output_root>/<experiment>/<tag>/`
//! and the report under `<output_root>/<experiment>/report/`.

pub mod cli;
pub mod manifest;
pub mod pipeline;

pub use cli::run;
