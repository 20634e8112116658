//! JSON bodies of the backend HTTP protocol. Field names are normative.
//!
//! | endpoint            | request              | response                 |
//! |---------------------|----------------------|--------------------------|
//! | `POST /capabilities`| empty                | [`CapabilitiesResponse`] |
//! | `POST /finetune`    | [`FinetuneRequest`]  | [`FinetuneResponse`]     |
//! | `POST /generate`    | [`GenerateRequest`]  | [`GenerateResponse`]     |
//! | `POST /embed`       | [`EmbedRequest`]     | [`EmbedResponse`]        |
//! | `POST /score`       | [`ScoreRequest`]     | [`ScoreResponse`]        |
//!
//! Failures are non-2xx responses carrying [`ErrorResponse`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FinetuneSpec, GenerationMode, ScoreItem, ScoreKind, TextInput, TrainPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitiesResponse {
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub base_model_id: String,
    pub examples: Vec<TrainPair>,
    pub spec: FinetuneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneResponse {
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model_id: String,
    pub inputs: Vec<TextInput>,
    pub mode: GenerationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireGeneration {
    pub text: String,
    pub token_entropies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub generations: BTreeMap<String, Vec<WireGeneration>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub inputs: Vec<TextInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub kind: ScoreKind,
    pub items: Vec<ScoreItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
