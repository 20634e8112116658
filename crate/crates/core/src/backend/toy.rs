//! Deterministic in-process backend.
//!
//! A fine-tuned toy model answers an input by retrieving the labeled example
//! whose input shares the most distinct tokens with it and emitting that
//! example's target, with each token replaced from a fixed vocabulary with
//! probability `p(L) = p0 / (1 + |L| / s)`. The base model emits a corrupted
//! copy of its input at rate `p0`. In stochastic mode every input token is
//! additionally dropped with probability `input_dropout` before retrieval, so
//! inputs with an ambiguous nearest neighbour produce disagreeing samples.
//!
//! Every random draw is seeded from (model seed, example id, sample index),
//! plus the request seed in stochastic mode.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    validate_generation_mode, Backend, Capabilities, Capability, FinetuneSpec, Generation,
    GenerationMap, GenerationMode, ModelHandle, ScoreItem, ScoreKind, TextInput, TrainPair,
    BASE_MODEL_ID,
};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingSet;
use crate::metrics::tokenize;
use crate::par;
use crate::seeding::{self, StableHasher};

pub const TOY_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Corruption rate of the base model (`p0`).
    pub base_corruption: f64,
    /// Labeled-set size at which the corruption rate halves (`s`).
    pub corruption_scale: f64,
    pub vocab_size: usize,
    /// Per-token drop rate applied to the query in stochastic mode.
    pub input_dropout: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            base_corruption: 0.5,
            corruption_scale: 20.0,
            vocab_size: 256,
            input_dropout: 0.3,
        }
    }
}

impl ToyConfig {
    pub fn corruption(&self, labeled: usize) -> f64 {
        self.base_corruption / (1.0 + labeled as f64 / self.corruption_scale)
    }

    fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.base_corruption) || !unit.contains(&self.input_dropout) {
            return Err(Error::invalid("toy rates must lie in [0, 1]"));
        }
        if self.corruption_scale <= 0.0 || self.vocab_size < 2 {
            return Err(Error::invalid(
                "toy corruption_scale must be positive and vocab_size at least 2",
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct ToyModel {
    seed: u64,
    corruption: f64,
    targets: Vec<Vec<String>>,
    /// Token → labeled indices whose input contains it.
    postings: HashMap<String, Vec<u32>>,
}

impl ToyModel {
    fn base(cfg: &ToyConfig) -> Self {
        ToyModel {
            seed: 0,
            corruption: cfg.base_corruption,
            targets: Vec::new(),
            postings: HashMap::new(),
        }
    }

    fn retrieve(&self, query: &BTreeSet<&str>) -> usize {
        let mut overlap = vec![0u32; self.targets.len()];
        for tok in query {
            if let Some(list) = self.postings.get(*tok) {
                for &i in list {
                    overlap[i as usize] += 1;
                }
            }
        }
        // First maximum wins, i.e. the earliest labeled example.
        let mut best = 0;
        for (i, &c) in overlap.iter().enumerate() {
            if c > overlap[best] {
                best = i;
            }
        }
        best
    }
}

pub struct ToyBackend {
    cfg: ToyConfig,
    caps: Capabilities,
    vocab: Vec<String>,
    models: RwLock<HashMap<String, Arc<ToyModel>>>,
}

impl std::fmt::Debug for ToyBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyBackend")
            .field("cfg", &self.cfg)
            .field("caps", &self.caps)
            .finish_non_exhaustive()
    }
}

impl Default for ToyBackend {
    fn default() -> Self {
        Self::new(ToyConfig::default()).expect("default toy config is valid")
    }
}

impl ToyBackend {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        Self::with_capabilities(cfg, Capabilities::all())
    }

    /// A toy backend advertising (and honouring) only `caps`.
    pub fn with_capabilities(cfg: ToyConfig, caps: Capabilities) -> Result<Self> {
        cfg.validate()?;
        let base = Arc::new(ToyModel::base(&cfg));
        let models = HashMap::from([(BASE_MODEL_ID.to_string(), base)]);
        Ok(ToyBackend {
            vocab: (0..cfg.vocab_size).map(|i| format!("w{i:03}")).collect(),
            cfg,
            caps,
            models: RwLock::new(models),
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    fn model(&self, handle: &ModelHandle) -> Result<Arc<ToyModel>> {
        self.models
            .read()
            .expect("model table poisoned")
            .get(&handle.model_id)
            .cloned()
            .ok_or_else(|| Error::Backend(format!("unknown model `{}`", handle.model_id)))
    }

    fn generate_one(
        &self,
        model: &ToyModel,
        input: &TextInput,
        sample: u64,
        request_seed: Option<u64>,
    ) -> Generation {
        let mut hasher = StableHasher::new()
            .u64(model.seed)
            .str(&input.id)
            .u64(sample);
        if let Some(s) = request_seed {
            hasher = hasher.str("stochastic").u64(s);
        }
        let mut rng = seeding::rng(hasher.finish());

        let source = tokenize(&input.text);
        let mut tokens: Vec<String> = if model.targets.is_empty() {
            source.tokens().to_vec()
        } else {
            let mut query: BTreeSet<&str> = source.tokens().iter().map(String::as_str).collect();
            if request_seed.is_some() {
                query.retain(|_| !rng.random_bool(self.cfg.input_dropout));
            }
            model.targets[model.retrieve(&query)].clone()
        };

        let p = model.corruption;
        let h = (self.cfg.vocab_size as f64).ln();
        let mut entropies = Vec::with_capacity(tokens.len());
        for tok in tokens.iter_mut() {
            if rng.random_bool(p) {
                *tok = self.vocab[rng.random_range(0..self.vocab.len())].clone();
                entropies.push(h * p);
            } else {
                entropies.push(h * (1.0 - p) * 0.1);
            }
        }
        Generation {
            example_id: input.id.clone(),
            text: tokens.join(" "),
            token_entropies: entropies,
        }
    }
}

/// Hashed bag of token bigrams (with sentence boundary markers), averaged
/// over the bigram count.
fn embed_text(text: &str) -> Vec<f64> {
    let toks = tokenize(text);
    let mut seq: Vec<&str> = Vec::with_capacity(toks.len() + 2);
    seq.push("<s>");
    seq.extend(toks.tokens().iter().map(String::as_str));
    seq.push("</s>");
    let mut v = vec![0.0; TOY_EMBEDDING_DIM];
    for pair in seq.windows(2) {
        let h = StableHasher::new().str(pair[0]).str(pair[1]).finish();
        v[(h % TOY_EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    let n = (seq.len() - 1) as f64;
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Multiset token-overlap F1.
fn overlap_f1(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in r.tokens() {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in c.tokens() {
        if let Some(n) = counts.get_mut(t.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / c.len() as f64;
    let rec = common as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Longer words read as more formal; saturating in mean token length.
fn formality(text: &str) -> f64 {
    let toks = tokenize(text);
    if toks.is_empty() {
        return 0.0;
    }
    let chars: usize = toks.tokens().iter().map(|t| t.chars().count()).sum();
    let mean = chars as f64 / toks.len() as f64;
    1.0 - (-mean / 6.0).exp()
}

impl Backend for ToyBackend {
    fn capabilities(&self) -> Result<Capabilities> {
        Ok(self.caps.clone())
    }

    fn finetune(
        &self,
        base: &ModelHandle,
        examples: &[TrainPair],
        spec: &FinetuneSpec,
    ) -> Result<ModelHandle> {
        self.caps.require(Capability::Finetune)?;
        if base.model_id != BASE_MODEL_ID {
            return Err(Error::Backend(format!(
                "fine-tuning must start from `{BASE_MODEL_ID}`, got `{}`",
                base.model_id
            )));
        }
        if examples.is_empty() {
            return Ok(ModelHandle::base());
        }

        let mut hasher = StableHasher::new()
            .u64(spec.seed)
            .u64(u64::from(spec.epochs))
            .u64(spec.learning_rate.to_bits())
            .u64(u64::from(spec.train_batch_size))
            .u64(self.cfg.base_corruption.to_bits())
            .u64(self.cfg.corruption_scale.to_bits());
        let mut targets = Vec::with_capacity(examples.len());
        let mut postings: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, ex) in examples.iter().enumerate() {
            hasher = hasher.str(&ex.input).str(&ex.target);
            let distinct: BTreeSet<String> = tokenize(&ex.input).tokens().iter().cloned().collect();
            for tok in distinct {
                postings.entry(tok).or_default().push(i as u32);
            }
            targets.push(tokenize(&ex.target).tokens().to_vec());
        }
        let model_id = format!("toy-{:016x}", hasher.finish());
        let model = ToyModel {
            seed: spec.seed,
            corruption: self.cfg.corruption(examples.len()),
            targets,
            postings,
        };
        self.models
            .write()
            .expect("model table poisoned")
            .entry(model_id.clone())
            .or_insert_with(|| Arc::new(model));
        Ok(ModelHandle::tuned(model_id))
    }

    fn generate(
        &self,
        model: &ModelHandle,
        inputs: &[TextInput],
        mode: &GenerationMode,
    ) -> Result<GenerationMap> {
        self.caps.require(Capability::Generate)?;
        validate_generation_mode(mode)?;
        let m = self.model(model)?;
        let outputs = match *mode {
            GenerationMode::Deterministic => {
                par::map(inputs, |x| vec![self.generate_one(&m, x, 0, None)])
            }
            GenerationMode::Stochastic { num_samples, seed } => {
                self.caps.require(Capability::StochasticGenerate)?;
                par::map(inputs, |x| {
                    (1..=num_samples as u64)
                        .map(|s| self.generate_one(&m, x, s, Some(seed)))
                        .collect()
                })
            }
        };
        Ok(inputs.iter().map(|x| x.id.clone()).zip(outputs).collect())
    }

    fn embed(&self, inputs: &[TextInput]) -> Result<EmbeddingSet> {
        self.caps.require(Capability::Embed)?;
        let vectors = par::map(inputs, |x| (x.id.clone(), embed_text(&x.text)));
        EmbeddingSet::from_vectors(TOY_EMBEDDING_DIM, vectors)
    }

    fn score(&self, kind: ScoreKind, items: &[ScoreItem]) -> Result<Vec<f64>> {
        self.caps.require(kind.capability())?;
        items
            .iter()
            .enumerate()
            .map(|(i, item)| match kind {
                ScoreKind::Formality => Ok(formality(&item.candidate)),
                ScoreKind::Similarity => item
                    .reference
                    .as_deref()
                    .map(|r| overlap_f1(&item.candidate, r))
                    .ok_or_else(|| {
                        Error::Backend(format!("similarity item {i} has no reference"))
                    }),
            })
            .collect()
    }
}
