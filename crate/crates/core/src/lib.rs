//! Character-level grapheme-to-phoneme transduction as a probe of how hard a
//! language is to pronounce from its spelling.
//!
//! The crate is organised bottom-up:
//!
//! * [`lexicon`] parses ipa-dict wordlists, normalises and tokenises them and
//!   draws seeded, replayable dataset splits.
//! * [`tensor`] is a small dense tensor library with a reverse-mode tape.
//! * [`model`] is the encoder-decoder transformer built on that tape.
//! * [`training`] runs Adam over the model and persists checkpoints.
//! * [`evaluation`] decodes test words and scores them.
//! * [`complexity`] turns accuracies and inventories into the per-language
//!   ratio/sparsity tables and the accuracy-vs-ratio scatter plot.
//!
//! Data-parallel loops (matrix kernels, per-item decoding) use rayon when the
//! `parallel` feature is enabled and fall back to plain iteration otherwise.
//! Both paths produce bit-identical results.

pub mod complexity;
pub mod evaluation;
pub mod lexicon;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod training;

pub use complexity::{ComplexityRecord, OrthographyType};
pub use evaluation::EvalResult;
pub use lexicon::{DatasetSplit, LexiconEntry, Side, TokenSequence, Vocabulary};
pub use model::{G2pModel, ModelConfig};
pub use rng::Rng;
pub use tensor::{Scalar, Tape, Tensor, Var};
pub use training::{ModelCheckpoint, TrainConfig};
