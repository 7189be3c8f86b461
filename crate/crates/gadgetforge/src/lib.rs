//! GadgetForge: code-gadget datasets and desk-scale neural classifiers for
//! C/C++ software vulnerability detection.
//!
//! The pipeline runs in stages, each backed by one module:
//!
//! 1. [`extract`] — slice C/C++ sources into code gadgets around library/API
//!    call sites.
//! 2. [`clean`] — drop label-conflicting gadget bodies and duplicate copies
//!    by content hash.
//! 3. [`prep`] — symbolic renaming (`FUNC_n`/`VAR_n`), label assignment,
//!    group assembly, and train/test/fold partitioning.
//! 4. [`token`] — word-level and byte-level BPE vocabularies and fixed-length
//!    id sequences.
//! 5. [`nn`] + [`train`] — BiLSTM, BiGRU, and transformer-encoder classifiers
//!    with reverse-mode gradients and a warmup/decay training loop.
//! 6. [`eval`] — confusion accounting, FPR/FNR/precision/recall/F1, and
//!    report tables.
//!
//! [`corpus`] defines the on-disk gadget format shared by all stages, and
//! [`synth`] generates separable toy corpora for end-to-end tests.

pub mod clean;
pub mod corpus;
pub mod eval;
pub mod extract;
pub mod nn;
pub mod prep;
pub mod rng;
pub mod synth;
pub mod token;
pub mod train;

pub use corpus::{CorpusManifest, GadgetRecord, Origin, VulnCategory};
