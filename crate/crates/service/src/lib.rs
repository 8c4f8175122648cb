//! Serving and command-line tooling around `ner-core` models.
//!
//! A [`ModelRegistry`] holds named models with their word vectors. The
//! HTTP service exposes them as:
//!
//! * `POST /ner`: `{"model": "...", "sentences": [["Aachen", "liegt"]]}` to
//!   `{"model": "...", "labels": [["B-LOC", "O"]], "timing_ms": 1.2}`
//! * `GET /models`: registered model names
//! * `GET /health`: `{"status": "ok"}`

pub mod api;
pub mod mapping;
pub mod registry;
pub mod server;
pub mod train_config;

pub use api::{handle_ner_request, ApiError, NerRequest, NerResponse};
pub use mapping::map_labels_combined;
pub use registry::{ModelRegistry, RegistryConfig, RegistryError};
pub use server::{router, serve};
