//! Corpus curation and contamination auditing.
//!
//! The crate is organised as a set of pipeline stages that operate on a
//! line-delimited [`corpus::CorpusManifest`]:
//!
//! * [`extract`] recovers main-body text from raw web pages,
//! * [`quality`] does language identification, perplexity bucketing,
//!   reference-likeness classification and code heuristics,
//! * [`dedup`] caps recurring paragraphs and removes near-duplicates,
//!
//! plus the modelling pieces used to score and plan a training corpus:
//! [`tokenizer`], [`ngram`], [`mixture`], [`monitor`] and [`leakage`].
//!
//! Data-parallel loops go through [`exec::Execution`]. With the `parallel`
//! feature (on by default) they run on rayon; without it, or with
//! `Execution::Sequential`, they run on the calling thread and produce the
//! same output.

pub mod corpus;
pub mod dedup;
pub mod error;
pub mod exec;
pub mod extract;
pub mod hashing;
pub mod leakage;
pub mod mixture;
pub mod monitor;
pub mod ngram;
pub mod pipeline;
pub mod quality;
pub mod refgen;
pub mod tokenizer;
pub mod unionfind;

pub use error::{Error, Result};
pub use exec::Execution;
