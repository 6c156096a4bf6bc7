//! Corpus-to-verdict pipeline for source-level political stance classification.
//!
//! The pipeline ingests articles from rated media sources, inherits coarse
//! Left/Right labels from the source ratings (distant supervision), selects
//! politically loaded topics with LDA, trains a binary stance classifier, and
//! aggregates per-article predictions into source-level verdicts with
//! bootstrap confidence intervals. Instruction-following language models can
//! be probed with a subject battery and audited as one more media source.

pub mod corpus;
pub mod evalrep;
pub mod hash;
pub mod lda;
pub mod probe;
pub mod stance;
pub mod synth;
pub mod textprep;
