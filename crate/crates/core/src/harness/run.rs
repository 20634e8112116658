use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use crate::analysis::{batch_diversity, batch_outlier_score, relative_selection_performance};
use crate::backend::{
    Backend, FinetuneSpec, Generation, GenerationMode, ModelHandle, RemoteBackend,
    ScoreItem, ScoreKind, TextInput, ToyBackend, TrainPair,
};
use crate::corpus::{load_dataset, DatasetSplit, Example, PoolState};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingSet;
use crate::metrics::{
    bleu_corpus, ibleu_from_parts, per_example_scores, tokenize, AuxScores, MetricConfig,
    MetricKind,
};
use crate::strategies::{pool_distance_sums, select, SelectionContext, StrategyName};
use crate::{par, seeding};

use super::config::{BackendConfig, EvalMode, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub strategy: String,
    pub seed: u64,
    pub iteration: usize,
    pub labeled_count: usize,
    pub metric_name: String,
    pub metric_value: f64,
    pub selected_ids: Vec<String>,
    /// Ranking scores of the selected ids, for strategies that rank.
    pub strategy_scores: Option<BTreeMap<String, f64>>,
    pub wall_time_s: f64,
}

/// First-iteration batch geometry of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRecord {
    pub seed: u64,
    pub batch_size: usize,
    pub outlier_score: f64,
    pub diversity: f64,
}

/// How the batch chosen at `iteration` scored under the model that chose it,
/// relative to the whole unlabeled pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionRecord {
    pub seed: u64,
    pub iteration: usize,
    pub relative_performance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    /// Iteration that was being computed when the backend failed.
    pub iteration: usize,
    pub message: String,
}

/// Everything one seed produced. `failure` marks `records` as partial.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub profile: Option<ProfileRecord>,
    pub selection: Vec<SelectionRecord>,
    pub failure: Option<SeedFailure>,
}

impl SeedOutcome {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Arc<dyn Backend>> {
    Ok(match cfg {
        BackendConfig::Toy(toy) => Arc::new(ToyBackend::new(toy.clone())?),
        BackendConfig::Remote { url } => Arc::new(RemoteBackend::new(url.clone())),
    })
}

/// Loads the configured datasets and backend, then runs every seed.
pub fn run(cfg: &RunConfig) -> Result<Vec<SeedOutcome>> {
    let train = load_dataset(&cfg.train_path, "train")?;
    let test = load_dataset(&cfg.test_path, "test")?;
    let backend = build_backend(&cfg.backend)?;
    Experiment::new(cfg, &train, &test, backend.as_ref())?.run_seeds(&cfg.seeds)
}

/// A validated configuration bound to its data and backend.
pub struct Experiment<'a> {
    cfg: &'a RunConfig,
    train: &'a DatasetSplit,
    test: &'a DatasetSplit,
    backend: &'a dyn Backend,
    train_index: BTreeMap<&'a str, &'a Example>,
}

impl<'a> Experiment<'a> {
    /// Checks the configuration against the data and the backend's
    /// capabilities; nothing is generated or trained here.
    pub fn new(
        cfg: &'a RunConfig,
        train: &'a DatasetSplit,
        test: &'a DatasetSplit,
        backend: &'a dyn Backend,
    ) -> Result<Self> {
        cfg.validate()?;
        let missing = backend.capabilities()?.missing(&cfg.required_capabilities());
        if !missing.is_empty() {
            let names: Vec<&str> = missing.iter().map(|c| c.name()).collect();
            return Err(Error::Capability(format!(
                "backend lacks {} needed by strategy `{}` with metric `{}`",
                names.join(", "),
                cfg.strategy,
                cfg.metric
            )));
        }
        if test.is_empty() {
            return Err(Error::Empty("test split"));
        }
        let pool_size = cfg.pool_cap.min(train.len());
        let needed: usize = cfg.schedule.batch_sizes.iter().sum();
        if pool_size < needed {
            return Err(Error::invalid(format!(
                "schedule labels {needed} examples but the pool holds {pool_size}"
            )));
        }
        for id in train.ids().chain(test.ids()) {
            if id.contains(';') {
                return Err(Error::invalid(format!("example id `{id}` contains `;`")));
            }
        }
        Ok(Experiment {
            cfg,
            train,
            test,
            backend,
            train_index: train.examples.iter().map(|e| (e.id.as_str(), e)).collect(),
        })
    }

    /// Runs the seeds independently (in parallel when enabled) and returns
    /// their outcomes in the given order.
    pub fn run_seeds(&self, seeds: &[u64]) -> Result<Vec<SeedOutcome>> {
        par::map(seeds, |&seed| self.run_seed(seed)).into_iter().collect()
    }

    fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            backend: self.backend,
            metric: self.cfg.metric,
            metric_config: self.cfg.metric_config,
            eval_mode: self.cfg.eval_mode,
            prompt_template: self.cfg.prompt_template.as_deref(),
        }
    }

    fn examples(&self, ids: &[String]) -> Vec<Example> {
        ids.iter()
            .map(|id| (*self.train_index[id.as_str()]).clone())
            .collect()
    }

    /// One full active learning loop. Errors before the first backend call
    /// (bad pool or test split) are returned; backend failures afterwards
    /// end the seed early with its partial records and a failure marker.
    pub fn run_seed(&self, seed: u64) -> Result<SeedOutcome> {
        let cfg = self.cfg;
        let mut pool = PoolState::init(self.train, cfg.pool_cap, seed)?;
        let test = if cfg.test_size == 0 {
            self.test.clone()
        } else {
            self.test.subsample(cfg.test_size, seeding::derive(seed, "test"))
        };
        let mut out = SeedOutcome {
            seed,
            records: Vec::new(),
            profile: None,
            selection: Vec::new(),
            failure: None,
        };
        let mut iteration = 0;
        if let Err(e) = self.drive(seed, &mut pool, &test, &mut out, &mut iteration) {
            out.failure = Some(SeedFailure {
                iteration,
                message: e.to_string(),
            });
        }
        Ok(out)
    }

    fn drive(
        &self,
        seed: u64,
        pool: &mut PoolState,
        test: &DatasetSplit,
        out: &mut SeedOutcome,
        iteration: &mut usize,
    ) -> Result<()> {
        let cfg = self.cfg;
        let eval = self.evaluator();
        let needs = cfg.strategy.requirements();
        let cumulative = cfg.schedule.cumulative();
        let initial: HashSet<String> = pool.unlabeled().iter().cloned().collect();
        let spec = FinetuneSpec {
            seed: seeding::derive(seed, "backend"),
            ..cfg.finetune.clone()
        };
        let record = |iteration: usize,
                      labeled: usize,
                      value: f64,
                      selected: Vec<String>,
                      scores: Option<BTreeMap<String, f64>>,
                      started: Instant| RunRecord {
            dataset: cfg.dataset.clone(),
            strategy: cfg.strategy.name().to_string(),
            seed,
            iteration,
            labeled_count: labeled,
            metric_name: cfg.metric.name().to_string(),
            metric_value: value,
            selected_ids: selected,
            strategy_scores: scores,
            wall_time_s: started.elapsed().as_secs_f64(),
        };

        let started = Instant::now();
        let mut model = ModelHandle::base();
        let zero_shot = eval.evaluate(&model, &test.examples)?;
        out.records.push(record(0, 0, zero_shot, Vec::new(), None, started));

        let embeddings = if needs.embeddings || cfg.profile_batches {
            let inputs: Vec<TextInput> = self
                .examples(pool.unlabeled())
                .into_iter()
                .map(|e| TextInput::new(e.id, e.input))
                .collect();
            Some(self.backend.embed(&inputs)?)
        } else {
            None
        };
        let distance_sums = match (&embeddings, cfg.strategy) {
            (Some(emb), StrategyName::Idds) => Some(pool_distance_sums(pool.unlabeled(), emb)?),
            _ => None,
        };

        for (i, &n) in cfg.schedule.batch_sizes.iter().enumerate() {
            *iteration = i + 1;
            let started = Instant::now();
            let unlabeled = self.examples(pool.unlabeled());

            let generations = if needs.generations || needs.per_example_eval || cfg.track_selection_performance {
                Some(eval.generate(&model, &unlabeled)?)
            } else {
                None
            };
            let pool_scores = match &generations {
                Some(g) if needs.per_example_eval || cfg.track_selection_performance => {
                    Some(eval.score_generations(g, &unlabeled)?)
                }
                _ => None,
            };
            let samples = if needs.stochastic_samples {
                let mode = GenerationMode::Stochastic {
                    num_samples: cfg.strategy_params.mc_samples,
                    seed: seeding::derive(seed, &format!("mc/{}", i + 1)),
                };
                Some(self.backend.generate(&model, &eval.inputs(&unlabeled), &mode)?)
            } else {
                None
            };

            let ctx = SelectionContext {
                pool: &*pool,
                embeddings: embeddings.as_ref(),
                unlabeled_generations: generations.as_ref(),
                stochastic_samples: samples.as_ref(),
                per_example_eval: pool_scores.as_ref(),
                distance_sums: distance_sums.as_ref(),
                rng_seed: seeding::derive(seed, &format!("strategy/{}", i + 1)),
                params: cfg.strategy_params,
                metric: cfg.metric_config,
            };
            if i == 0 && cfg.profile_batches {
                out.profile = self.profile(&ctx, seed, embeddings.as_ref())?;
            }
            let batch = select(cfg.strategy, &ctx, n)?;

            if cfg.track_selection_performance {
                if let Some(scores) = &pool_scores {
                    let picked: BTreeMap<String, f64> =
                        batch.ids.iter().map(|id| (id.clone(), scores[id])).collect();
                    // A pool the model scores uniformly carries no signal.
                    if let Ok(r) = relative_selection_performance(&picked, scores) {
                        out.selection.push(SelectionRecord {
                            seed,
                            iteration: i + 1,
                            relative_performance: r,
                        });
                    }
                }
            }

            pool.move_to_labeled(&batch.ids)?;
            assert_eq!(pool.labeled().len(), cumulative[i + 1], "labeled count drifted");
            assert_eq!(
                pool.labeled().len() + pool.unlabeled().len(),
                initial.len(),
                "pool lost or gained examples"
            );
            let lab: HashSet<&str> = pool.labeled().iter().map(String::as_str).collect();
            assert!(
                pool.unlabeled().iter().all(|id| !lab.contains(id.as_str())),
                "labeled and unlabeled pools overlap"
            );

            // Always from the base model, on everything labeled so far.
            let pairs: Vec<TrainPair> = self
                .examples(pool.labeled())
                .into_iter()
                .map(|e| TrainPair {
                    input: cfg.apply_template(&e.input),
                    target: e.references[0].clone(),
                })
                .collect();
            model = self.backend.finetune(&ModelHandle::base(), &pairs, &spec)?;
            let value = eval.evaluate(&model, &test.examples)?;
            out.records.push(record(
                i + 1,
                pool.labeled().len(),
                value,
                batch.ids,
                batch.scores,
                started,
            ));
        }
        Ok(())
    }

    /// Geometry of an enlarged first batch, chosen from the same context as
    /// the real one but from its own random stream.
    fn profile(
        &self,
        ctx: &SelectionContext<'_>,
        seed: u64,
        embeddings: Option<&EmbeddingSet>,
    ) -> Result<Option<ProfileRecord>> {
        let Some(emb) = embeddings else {
            return Ok(None);
        };
        let k = self.cfg.strategy_params.knn_k;
        let unl = ctx.pool.unlabeled();
        if unl.len() <= k {
            return Ok(None);
        }
        let ctx = SelectionContext {
            rng_seed: seeding::derive(seed, "profile"),
            ..*ctx
        };
        let batch = select(self.cfg.strategy, &ctx, self.cfg.analysis_batch_size)?;
        Ok(Some(ProfileRecord {
            seed,
            batch_size: batch.ids.len(),
            outlier_score: batch_outlier_score(&batch.ids, unl, emb, k)?,
            diversity: batch_diversity(&batch.ids, emb)?,
        }))
    }
}

/// Generation and scoring of a model over a set of examples.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub backend: &'a dyn Backend,
    pub metric: MetricKind,
    pub metric_config: MetricConfig,
    pub eval_mode: EvalMode,
    pub prompt_template: Option<&'a str>,
}

impl Evaluator<'_> {
    fn inputs(&self, examples: &[Example]) -> Vec<TextInput> {
        examples
            .iter()
            .map(|e| {
                let text = match self.prompt_template {
                    Some(t) => t.replace("{input}", &e.input),
                    None => e.input.clone(),
                };
                TextInput::new(e.id.clone(), text)
            })
            .collect()
    }

    /// Deterministic decode of every example.
    pub fn generate(
        &self,
        model: &ModelHandle,
        examples: &[Example],
    ) -> Result<BTreeMap<String, Generation>> {
        let mut map = self
            .backend
            .generate(model, &self.inputs(examples), &GenerationMode::Deterministic)?;
        examples
            .iter()
            .map(|e| {
                map.remove(&e.id)
                    .and_then(|mut g| (!g.is_empty()).then(|| g.swap_remove(0)))
                    .map(|g| (e.id.clone(), g))
                    .ok_or_else(|| Error::Backend(format!("no generation for `{}`", e.id)))
            })
            .collect()
    }

    /// Formality of each generation and its best similarity to a reference.
    fn aux_scores(
        &self,
        generations: &BTreeMap<String, Generation>,
        examples: &[Example],
    ) -> Result<AuxScores> {
        let formality_items: Vec<ScoreItem> = examples
            .iter()
            .map(|e| ScoreItem {
                candidate: generations[&e.id].text.clone(),
                reference: None,
            })
            .collect();
        let formality = self.backend.score(ScoreKind::Formality, &formality_items)?;
        let mut owners = Vec::new();
        let mut similarity_items = Vec::new();
        for (i, e) in examples.iter().enumerate() {
            for r in &e.references {
                owners.push(i);
                similarity_items.push(ScoreItem {
                    candidate: generations[&e.id].text.clone(),
                    reference: Some(r.clone()),
                });
            }
        }
        let similarity = self.backend.score(ScoreKind::Similarity, &similarity_items)?;
        let mut best = vec![0.0f64; examples.len()];
        for (i, s) in owners.into_iter().zip(similarity) {
            best[i] = best[i].max(s);
        }
        Ok(examples
            .iter()
            .zip(formality.into_iter().zip(best))
            .map(|(e, fs)| (e.id.clone(), fs))
            .collect())
    }

    pub fn score_generations(
        &self,
        generations: &BTreeMap<String, Generation>,
        examples: &[Example],
    ) -> Result<BTreeMap<String, f64>> {
        let aux = match self.metric {
            MetricKind::GScore => Some(self.aux_scores(generations, examples)?),
            _ => None,
        };
        per_example_scores(self.metric, generations, examples, &self.metric_config, aux.as_ref())
    }

    /// Per-example sentence scores of `model` on `examples`.
    pub fn per_example(&self, model: &ModelHandle, examples: &[Example]) -> Result<BTreeMap<String, f64>> {
        let gens = self.generate(model, examples)?;
        self.score_generations(&gens, examples)
    }

    /// Test-set score of `model` under the configured evaluation mode.
    pub fn evaluate(&self, model: &ModelHandle, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Empty("test split"));
        }
        let gens = self.generate(model, examples)?;
        match (self.eval_mode, self.metric) {
            (EvalMode::Corpus, MetricKind::Bleu | MetricKind::Ibleu) => {
                let order = self.metric_config.bleu_max_order;
                let to_refs: Vec<_> = examples
                    .iter()
                    .map(|e| {
                        (
                            tokenize(&gens[&e.id].text),
                            e.references.iter().map(|r| tokenize(r)).collect::<Vec<_>>(),
                        )
                    })
                    .collect();
                let refs = bleu_corpus(&to_refs, order)?;
                if self.metric == MetricKind::Bleu {
                    return Ok(refs);
                }
                let to_source: Vec<_> = to_refs
                    .into_iter()
                    .zip(examples)
                    .map(|((c, _), e)| (c, vec![tokenize(&e.input)]))
                    .collect();
                let source = bleu_corpus(&to_source, order)?;
                Ok(ibleu_from_parts(refs, source, self.metric_config.ibleu_alpha))
            }
            _ => {
                let scores = self.score_generations(&gens, examples)?;
                Ok(scores.values().sum::<f64>() / scores.len() as f64)
            }
        }
    }
}

/// Flattened records of several outcomes, in outcome order.
pub fn records_of(outcomes: &[SeedOutcome]) -> Vec<RunRecord> {
    outcomes.iter().flat_map(|o| o.records.iter().cloned()).collect()
}

