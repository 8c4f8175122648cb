//! Neural named entity recognition: a BiLSTM-CRF tagger with pluggable
//! character-level feature extractors and pre-trained word embeddings.

pub mod autodiff;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod model;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
