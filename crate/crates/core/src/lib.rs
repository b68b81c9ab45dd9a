//! Duplicate-question detection for community Q&A data with explicit
//! modelling of source-code snippets.
//!
//! The pipeline: [`ingest`] parses Stack Exchange dumps, [`pairgen`] builds a
//! labeled and leakage-safe pair dataset, [`codeprep`] canonicalizes code,
//! [`codelm`] pretrains a character-level language model whose final hidden
//! state embeds a snippet, and two classifiers score pairs: the Siamese LSTM
//! network in [`siamese`] and the similarity-grid CNN in [`gridcnn`].
//! [`metrics`] evaluates them.

pub mod codelm;
pub mod codeprep;
pub mod config;
pub mod error;
pub mod gradsuite;
pub mod gridcnn;
pub mod ingest;
pub mod metrics;
pub mod pairgen;
pub mod siamese;
pub mod synth;
pub mod train;
pub mod nncore;

pub use error::{Error, Result};
