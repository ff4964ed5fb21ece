//! Cross-modal transformer over hourly EHR series and irregularly timed
//! clinical-note embeddings, with the data pipeline, synthetic cohorts,
//! training/evaluation, note-type ablations and attention explanations.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod interpret;
pub mod model;
pub mod seed;
pub mod synthgen;
pub mod traineval;

pub use error::{Error, Result};
