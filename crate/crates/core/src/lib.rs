//! glosspipe — an automatic interlinear glossing pipeline.
//!
//! The crate covers the full loop for building and measuring morpheme-by-
//! morpheme glossing systems for low-resource languages:
//!
//! * [`corpus`] — interlinear glossed text (IGT) parsing, validation,
//!   document-level splits, near-duplicate detection, and synthetic corpora.
//! * [`lexicon`] — grammatical/lexical label classification and the
//!   morpheme-to-gloss glossary extracted from training data.
//! * [`neural`] — a BiLSTM-CRF morpheme tagger trained from scratch in
//!   double precision, with exact log-space inference.
//! * [`retrieval`] — character n-gram TF-IDF indexing for few-shot example
//!   selection.
//! * [`prompting`] — byte-exact prompt rendering for gloss generation and
//!   hybrid correction, plus output extraction.
//! * [`gateway`] — model backends (HTTP chat, scripted, echo, oracle) with
//!   retry, caching, and bounded concurrency.
//! * [`evaluation`] — token-level gloss accuracy and stratified error
//!   reports.
//! * [`experiments`] — the experiment runners and their emitted artifacts.
//!
//! Everything that consumes a seed is bit-reproducible: the same inputs,
//! config, and seeds produce byte-identical artifacts.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod gateway;
pub mod lexicon;
pub mod neural;
pub mod prompting;
pub mod retrieval;

pub use error::{Error, Result};
