use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::registry::ModelRegistry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NerRequest {
    pub model: String,
    pub sentences: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NerResponse {
    pub model: String,
    pub labels: Vec<Vec<String>>,
    pub timing_ms: f64,
}

/// A failed request, with the HTTP status it maps to.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ApiError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("unknown model `{name}`")]
    UnknownModel { name: String, available: Vec<String> },
    #[error("prediction failed: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::BadRequest(_) => 400,
            ApiError::UnknownModel { .. } => 404,
            ApiError::Internal(_) => 500,
        }
    }

    pub fn body(&self) -> serde_json::Value {
        match self {
            ApiError::UnknownModel { available, .. } => serde_json::json!({
                "error": self.to_string(),
                "available_models": available,
            }),
            _ => serde_json::json!({ "error": self.to_string() }),
        }
    }
}

/// Parses a JSON request body.
pub fn parse_request(body: &[u8]) -> Result<NerRequest, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

/// Tags every sentence of `request` with the named model.
pub fn handle_ner_request(registry: &ModelRegistry, request: &NerRequest) -> Result<NerResponse, ApiError> {
    let start = Instant::now();
    let served = registry.get(&request.model).ok_or_else(|| ApiError::UnknownModel {
        name: request.model.clone(),
        available: registry.names(),
    })?;
    for (i, s) in request.sentences.iter().enumerate() {
        if s.is_empty() {
            return Err(ApiError::BadRequest(format!("sentence {i} is empty")));
        }
        if s.iter().any(|t| t.is_empty()) {
            return Err(ApiError::BadRequest(format!("sentence {i} contains an empty token")));
        }
    }
    let refs: Vec<&[String]> = request.sentences.iter().map(|s| s.as_slice()).collect();
    let labels = if refs.is_empty() {
        Vec::new()
    } else {
        served
            .model
            .predict_batch(&served.store, &refs)
            .map_err(|e| ApiError::Internal(e.to_string()))?
    };
    Ok(NerResponse {
        model: request.model.clone(),
        labels,
        timing_ms: start.elapsed().as_secs_f64() * 1000.0,
    })
}
