//! Model-backend contract.
//!
//! The harness talks to models only through [`Backend`]. Two implementations
//! ship here: [`ToyBackend`], an in-process deterministic stand-in, and
//! [`RemoteBackend`], a JSON-over-HTTP client for external model servers.
//! [`server`] exposes any backend over the same wire protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingSet;

pub mod conformance;
mod remote;
pub mod server;
mod toy;
pub mod wire;

pub use remote::RemoteBackend;
pub use toy::{ToyBackend, ToyConfig, TOY_EMBEDDING_DIM};

/// Id of the untuned model every backend must serve.
pub const BASE_MODEL_ID: &str = "base";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelHandle {
    pub model_id: String,
    pub base: bool,
}

impl ModelHandle {
    pub fn base() -> Self {
        ModelHandle {
            model_id: BASE_MODEL_ID.to_string(),
            base: true,
        }
    }

    pub fn tuned(model_id: impl Into<String>) -> Self {
        let model_id = model_id.into();
        let base = model_id == BASE_MODEL_ID;
        ModelHandle { model_id, base }
    }
}

/// One model output with a natural-log entropy per generated token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub example_id: String,
    pub text: String,
    pub token_entropies: Vec<f64>,
}

impl Generation {
    pub fn mean_entropy(&self) -> f64 {
        if self.token_entropies.is_empty() {
            0.0
        } else {
            self.token_entropies.iter().sum::<f64>() / self.token_entropies.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSpec {
    pub epochs: u32,
    pub learning_rate: f64,
    pub train_batch_size: u32,
    pub seed: u64,
}

impl Default for FinetuneSpec {
    fn default() -> Self {
        FinetuneSpec {
            epochs: 3,
            learning_rate: 5e-5,
            train_batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Capability {
    Finetune,
    Generate,
    StochasticGenerate,
    Embed,
    ScoreFormality,
    ScoreSimilarity,
}

impl Capability {
    pub const ALL: [Capability; 6] = [
        Capability::Finetune,
        Capability::Generate,
        Capability::StochasticGenerate,
        Capability::Embed,
        Capability::ScoreFormality,
        Capability::ScoreSimilarity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Capability::Finetune => "finetune",
            Capability::Generate => "generate",
            Capability::StochasticGenerate => "stochastic_generate",
            Capability::Embed => "embed",
            Capability::ScoreFormality => "score_formality",
            Capability::ScoreSimilarity => "score_similarity",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Capability {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Capability::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Backend(format!("unknown capability `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Capabilities(BTreeSet<Capability>);

impl Capabilities {
    pub fn all() -> Self {
        Capability::ALL.into_iter().collect()
    }

    pub fn contains(&self, c: Capability) -> bool {
        self.0.contains(&c)
    }

    pub fn iter(&self) -> impl Iterator<Item = Capability> + '_ {
        self.0.iter().copied()
    }

    /// Capabilities in `needed` that are absent here.
    pub fn missing(&self, needed: &Capabilities) -> Vec<Capability> {
        needed.0.difference(&self.0).copied().collect()
    }

    pub fn require(&self, c: Capability) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::Capability(c.name().to_string()))
        }
    }
}

impl FromIterator<Capability> for Capabilities {
    fn from_iter<I: IntoIterator<Item = Capability>>(iter: I) -> Self {
        Capabilities(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextInput {
    pub id: String,
    pub text: String,
}

impl TextInput {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        TextInput {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// A labeled training pair: model input and the chosen reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Deterministic,
    Stochastic { num_samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Formality,
    Similarity,
}

impl ScoreKind {
    pub fn capability(self) -> Capability {
        match self {
            ScoreKind::Formality => Capability::ScoreFormality,
            ScoreKind::Similarity => Capability::ScoreSimilarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub candidate: String,
    pub reference: Option<String>,
}

pub type GenerationMap = BTreeMap<String, Vec<Generation>>;

pub trait Backend: Send + Sync {
    fn capabilities(&self) -> Result<Capabilities>;

    /// Fine-tunes the base model on `examples`. Only the base handle is
    /// accepted; an empty training set returns the base handle itself.
    fn finetune(
        &self,
        base: &ModelHandle,
        examples: &[TrainPair],
        spec: &FinetuneSpec,
    ) -> Result<ModelHandle>;

    fn generate(
        &self,
        model: &ModelHandle,
        inputs: &[TextInput],
        mode: &GenerationMode,
    ) -> Result<GenerationMap>;

    fn embed(&self, inputs: &[TextInput]) -> Result<EmbeddingSet>;

    /// One score in [0, 1] per item, in item order.
    fn score(&self, kind: ScoreKind, items: &[ScoreItem]) -> Result<Vec<f64>>;
}

/// Checks the arguments every backend must reject before doing work.
pub(crate) fn validate_generation_mode(mode: &GenerationMode) -> Result<()> {
    if let GenerationMode::Stochastic { num_samples, .. } = mode {
        if *num_samples < 2 {
            return Err(Error::Backend(format!(
                "stochastic generation needs num_samples >= 2, got {num_samples}"
            )));
        }
    }
    Ok(())
}
