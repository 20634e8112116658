use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::*;
use super::{
    validate_generation_mode, Backend, Capabilities, FinetuneSpec, Generation, GenerationMap,
    GenerationMode, ModelHandle, ScoreItem, ScoreKind, TextInput, TrainPair,
};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingSet;

/// Client for a model server speaking the JSON protocol in [`super::wire`].
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .build();
        RemoteBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base_url);
        match self.agent.post(&url).send_json(body) {
            Ok(resp) => resp
                .into_json::<Resp>()
                .map_err(|e| Error::Backend(format!("{path}: malformed response: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let msg = resp
                    .into_json::<ErrorResponse>()
                    .map(|e| e.error)
                    .unwrap_or_else(|_| "no error body".to_string());
                Err(Error::Backend(format!("{path}: HTTP {code}: {msg}")))
            }
            Err(e) => Err(Error::Backend(format!("{path}: connection failed: {e}"))),
        }
    }
}

impl Backend for RemoteBackend {
    fn capabilities(&self) -> Result<Capabilities> {
        let resp: CapabilitiesResponse = self.post("/capabilities", &serde_json::json!({}))?;
        resp.flags.iter().map(|f| f.parse()).collect()
    }

    fn finetune(
        &self,
        base: &ModelHandle,
        examples: &[TrainPair],
        spec: &FinetuneSpec,
    ) -> Result<ModelHandle> {
        if !base.base {
            return Err(Error::Backend(format!(
                "fine-tuning must start from the base model, got `{}`",
                base.model_id
            )));
        }
        if examples.is_empty() {
            return Ok(ModelHandle::base());
        }
        let req = FinetuneRequest {
            base_model_id: base.model_id.clone(),
            examples: examples.to_vec(),
            spec: spec.clone(),
        };
        let resp: FinetuneResponse = self.post("/finetune", &req)?;
        Ok(ModelHandle::tuned(resp.model_id))
    }

    fn generate(
        &self,
        model: &ModelHandle,
        inputs: &[TextInput],
        mode: &GenerationMode,
    ) -> Result<GenerationMap> {
        validate_generation_mode(mode)?;
        let req = GenerateRequest {
            model_id: model.model_id.clone(),
            inputs: inputs.to_vec(),
            mode: *mode,
        };
        let resp: GenerateResponse = self.post("/generate", &req)?;
        let expected = match mode {
            GenerationMode::Deterministic => 1,
            GenerationMode::Stochastic { num_samples, .. } => *num_samples,
        };
        let mut out = GenerationMap::new();
        for (id, gens) in resp.generations {
            if gens.len() != expected {
                return Err(Error::Backend(format!(
                    "/generate: expected {expected} generations for `{id}`, got {}",
                    gens.len()
                )));
            }
            let gens = gens
                .into_iter()
                .map(|g| Generation {
                    example_id: id.clone(),
                    text: g.text,
                    token_entropies: g.token_entropies,
                })
                .collect();
            out.insert(id, gens);
        }
        if let Some(x) = inputs.iter().find(|x| !out.contains_key(&x.id)) {
            return Err(Error::Backend(format!("/generate: no output for `{}`", x.id)));
        }
        Ok(out)
    }

    fn embed(&self, inputs: &[TextInput]) -> Result<EmbeddingSet> {
        let resp: EmbedResponse = self.post(
            "/embed",
            &EmbedRequest {
                inputs: inputs.to_vec(),
            },
        )?;
        EmbeddingSet::from_vectors(resp.dim, resp.vectors)
    }

    fn score(&self, kind: ScoreKind, items: &[ScoreItem]) -> Result<Vec<f64>> {
        let resp: ScoreResponse = self.post(
            "/score",
            &ScoreRequest {
                kind,
                items: items.to_vec(),
            },
        )?;
        if resp.scores.len() != items.len() {
            return Err(Error::Backend(format!(
                "/score: expected {} scores, got {}",
                items.len(),
                resp.scores.len()
            )));
        }
        Ok(resp.scores)
    }
}
