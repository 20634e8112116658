//! Batch selection strategies.
//!
//! Every strategy is a pure function of a [`SelectionContext`] and the batch
//! size. Score ties always break by ascending example id.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Capabilities, Capability, Generation, GenerationMap};
use crate::corpus::PoolState;
use crate::error::{Error, Result};
use crate::geometry::{dist, EmbeddingSet};
use crate::metrics::{bleu_variance, tokenize, MetricConfig};
use crate::{par, seeding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Random,
    Coreset,
    Idds,
    Mte,
    McDropout,
    Oracle,
}

impl StrategyName {
    pub const ALL: [StrategyName; 6] = [
        StrategyName::Random,
        StrategyName::Coreset,
        StrategyName::Idds,
        StrategyName::Mte,
        StrategyName::McDropout,
        StrategyName::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyName::Random => "random",
            StrategyName::Coreset => "coreset",
            StrategyName::Idds => "idds",
            StrategyName::Mte => "mte",
            StrategyName::McDropout => "mc_dropout",
            StrategyName::Oracle => "oracle",
        }
    }

    /// Context fields the harness must populate for this strategy.
    pub fn requirements(self) -> Requirements {
        let mut r = Requirements::default();
        match self {
            StrategyName::Random => {}
            StrategyName::Coreset | StrategyName::Idds => r.embeddings = true,
            StrategyName::Mte => r.generations = true,
            StrategyName::McDropout => r.stochastic_samples = true,
            StrategyName::Oracle => r.per_example_eval = true,
        }
        r
    }

    /// Backend capabilities needed to populate [`Self::requirements`].
    pub fn capabilities(self) -> Capabilities {
        let r = self.requirements();
        let mut caps = Vec::new();
        if r.embeddings {
            caps.push(Capability::Embed);
        }
        if r.generations || r.per_example_eval {
            caps.push(Capability::Generate);
        }
        if r.stochastic_samples {
            caps.push(Capability::StochasticGenerate);
        }
        caps.into_iter().collect()
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyName::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Requirements {
    pub embeddings: bool,
    pub generations: bool,
    pub stochastic_samples: bool,
    pub per_example_eval: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyParams {
    /// IDDS weight of the labeled-distance term.
    pub idds_lambda: f64,
    /// Stochastic samples per example for MC dropout.
    pub mc_samples: usize,
    /// Neighbourhood size for density estimates.
    pub knn_k: usize,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            idds_lambda: 0.5,
            mc_samples: 10,
            knn_k: 10,
        }
    }
}

impl StrategyParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.idds_lambda) {
            return Err(Error::invalid("idds_lambda must lie in [0, 1]"));
        }
        if self.mc_samples < 2 {
            return Err(Error::invalid("mc_samples must be at least 2"));
        }
        if self.knn_k == 0 {
            return Err(Error::invalid("knn_k must be at least 1"));
        }
        Ok(())
    }
}

/// Everything a strategy may look at. Optional fields are filled only for
/// strategies that declare them in [`StrategyName::requirements`].
#[derive(Debug, Clone, Copy)]
pub struct SelectionContext<'a> {
    pub pool: &'a PoolState,
    pub embeddings: Option<&'a EmbeddingSet>,
    pub unlabeled_generations: Option<&'a BTreeMap<String, Generation>>,
    pub stochastic_samples: Option<&'a GenerationMap>,
    pub per_example_eval: Option<&'a BTreeMap<String, f64>>,
    /// Optional IDDS cache from [`pool_distance_sums`] over `U_D ∪ L_D`.
    pub distance_sums: Option<&'a BTreeMap<String, f64>>,
    pub rng_seed: u64,
    pub params: StrategyParams,
    pub metric: MetricConfig,
}

impl<'a> SelectionContext<'a> {
    pub fn new(pool: &'a PoolState, rng_seed: u64) -> Self {
        SelectionContext {
            pool,
            embeddings: None,
            unlabeled_generations: None,
            stochastic_samples: None,
            per_example_eval: None,
            distance_sums: None,
            rng_seed,
            params: StrategyParams::default(),
            metric: MetricConfig::default(),
        }
    }

    fn embeddings(&self) -> Result<&'a EmbeddingSet> {
        self.embeddings
            .ok_or_else(|| Error::invalid("strategy needs embeddings"))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectedBatch {
    pub ids: Vec<String>,
    /// Ranking score of each selected id, when the strategy has one.
    pub scores: Option<BTreeMap<String, f64>>,
}

pub fn select(name: StrategyName, ctx: &SelectionContext<'_>, n: usize) -> Result<SelectedBatch> {
    match name {
        StrategyName::Random => random_select(ctx, n),
        StrategyName::Coreset => coreset_greedy(ctx, n),
        StrategyName::Idds => idds_select(ctx, n),
        StrategyName::Mte => mte_select(ctx, n),
        StrategyName::McDropout => mc_dropout_select(ctx, n),
        StrategyName::Oracle => oracle_select(ctx, n),
    }
}

fn check_request(ctx: &SelectionContext<'_>, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let available = ctx.pool.unlabeled().len();
    if available == 0 {
        return Err(Error::Empty("unlabeled pool"));
    }
    Ok(n.min(available))
}

/// Higher score first, then ascending id.
fn by_score_desc(a: &(&str, f64), b: &(&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

fn top_n(mut scored: Vec<(&str, f64)>, n: usize, descending: bool) -> SelectedBatch {
    if descending {
        scored.sort_by(by_score_desc);
    } else {
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    }
    scored.truncate(n);
    SelectedBatch {
        ids: scored.iter().map(|(id, _)| id.to_string()).collect(),
        scores: Some(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect()),
    }
}

pub fn random_select(ctx: &SelectionContext<'_>, n: usize) -> Result<SelectedBatch> {
    let n = check_request(ctx, n)?;
    let unl = ctx.pool.unlabeled();
    let mut rng = seeding::rng(ctx.rng_seed);
    Ok(SelectedBatch {
        ids: index::sample(&mut rng, unl.len(), n)
            .into_iter()
            .map(|i| unl[i].clone())
            .collect(),
        scores: None,
    })
}

/// Greedy k-center: repeatedly takes the unlabeled point farthest from the
/// labeled pool plus everything already picked. With an empty labeled pool
/// a uniformly drawn seed point is picked first.
pub fn coreset_greedy(ctx: &SelectionContext<'_>, n: usize) -> Result<SelectedBatch> {
    let n = check_request(ctx, n)?;
    let emb = ctx.embeddings()?;
    let unl = ctx.pool.unlabeled();
    let cand = emb.rows(unl)?;
    let anchors = emb.rows(ctx.pool.labeled())?;

    let mut taken = vec![false; unl.len()];
    let mut ids = Vec::with_capacity(n);
    let mut scores = BTreeMap::new();

    let mut min_dist: Vec<f64> = if anchors.is_empty() {
        let mut rng = seeding::rng(ctx.rng_seed);
        let seed = rng.random_range(0..unl.len());
        taken[seed] = true;
        ids.push(unl[seed].clone());
        scores.insert(unl[seed].clone(), f64::INFINITY);
        par::map(&cand, |x| dist(x, cand[seed]))
    } else {
        par::map(&cand, |x| {
            anchors
                .iter()
                .map(|a| dist(x, a))
                .fold(f64::INFINITY, f64::min)
        })
    };

    while ids.len() < n {
        let mut best: Option<usize> = None;
        for i in 0..unl.len() {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => match min_dist[i].total_cmp(&min_dist[b]) {
                    Ordering::Greater => Some(i),
                    Ordering::Equal if unl[i] < unl[b] => Some(i),
                    _ => Some(b),
                },
            };
        }
        let pick = best.expect("n is capped at the pool size");
        taken[pick] = true;
        ids.push(unl[pick].clone());
        scores.insert(unl[pick].clone(), min_dist[pick]);
        let centre = cand[pick];
        par::for_each_mut(&mut min_dist, |i, d| {
            *d = d.min(dist(cand[i], centre));
        });
    }
    Ok(SelectedBatch {
        ids,
        scores: Some(scores),
    })
}

/// Sum of distances from each id to every id in `ids`.
pub fn pool_distance_sums(ids: &[String], emb: &EmbeddingSet) -> Result<BTreeMap<String, f64>> {
    let rows = emb.rows(ids)?;
    let sums = par::map(&rows, |x| rows.iter().map(|y| dist(x, y)).sum::<f64>());
    Ok(ids.iter().cloned().zip(sums).collect())
}

/// In-domain diversity score: `λ·mean dist to L_D − (1−λ)·mean dist to the
/// rest of U_D`; the labeled term is dropped while L_D is empty.
///
/// With `distance_sums` the unlabeled term is recovered from the cached
/// totals by subtracting distances to L_D, which costs O(|U|·|L|) instead of
/// O(|U|²).
pub fn idds_scores(ctx: &SelectionContext<'_>) -> Result<Vec<(String, f64)>> {
    let emb = ctx.embeddings()?;
    let unl = ctx.pool.unlabeled();
    let lab = ctx.pool.labeled();
    if lab.is_empty() && unl.len() < 2 {
        return Err(Error::invalid(
            "IDDS needs two unlabeled examples when the labeled pool is empty",
        ));
    }
    let lambda = ctx.params.idds_lambda;
    let cand = emb.rows(unl)?;
    let anchors = emb.rows(lab)?;
    let cached = match ctx.distance_sums {
        Some(sums) => Some(
            unl.iter()
                .map(|id| {
                    sums.get(id).copied().ok_or_else(|| Error::Missing {
                        what: "distance sum",
                        id: id.clone(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
        ),
        None => None,
    };
    let others = cand.len().saturating_sub(1).max(1) as f64;
    let idx: Vec<usize> = (0..unl.len()).collect();
    let scores = par::map(&idx, |&i| {
        let x = cand[i];
        let to_lab: f64 = anchors.iter().map(|a| dist(x, a)).sum();
        let unl_term = match &cached {
            Some(total) => (total[i] - to_lab).max(0.0) / others,
            None => {
                let mut s = 0.0;
                for (j, u) in cand.iter().enumerate() {
                    if j != i {
                        s += dist(x, u);
                    }
                }
                s / others
            }
        };
        if anchors.is_empty() {
            -(1.0 - lambda) * unl_term
        } else {
            lambda * to_lab / anchors.len() as f64 - (1.0 - lambda) * unl_term
        }
    });
    Ok(unl.iter().cloned().zip(scores).collect())
}

pub fn idds_select(ctx: &SelectionContext<'_>, n: usize) -> Result<SelectedBatch> {
    let n = check_request(ctx, n)?;
    let scores = idds_scores(ctx)?;
    Ok(top_n(
        scores.iter().map(|(id, s)| (id.as_str(), *s)).collect(),
        n,
        true,
    ))
}

/// Mean token entropy of each unlabeled example's deterministic generation.
pub fn mte_select(ctx: &SelectionContext<'_>, n: usize) -> Result<SelectedBatch> {
    let n = check_request(ctx, n)?;
    let gens = ctx
        .unlabeled_generations
        .ok_or_else(|| Error::invalid("MTE needs generations over the unlabeled pool"))?;
    let scored = ctx
        .pool
        .unlabeled()
        .iter()
        .map(|id| {
            gens.get(id)
                .map(|g| (id.as_str(), g.mean_entropy()))
                .ok_or_else(|| Error::Missing {
                    what: "generation",
                    id: id.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(top_n(scored, n, true))
}

/// BLEU variance among the stochastic samples of each unlabeled example.
pub fn mc_dropout_select(ctx: &SelectionContext<'_>, n: usize) -> Result<SelectedBatch> {
    let n = check_request(ctx, n)?;
    let samples = ctx
        .stochastic_samples
        .ok_or_else(|| Error::invalid("MC dropout needs stochastic samples"))?;
    let unl = ctx.pool.unlabeled();
    let order = ctx.metric.variance_bleu_order;
    let scores = par::map(unl, |id| -> Result<f64> {
        let gens = samples.get(id).ok_or_else(|| Error::Missing {
            what: "stochastic samples",
            id: id.clone(),
        })?;
        let toks: Vec<_> = gens.iter().map(|g| tokenize(&g.text)).collect();
        bleu_variance(&toks, order).map_err(|_| Error::Missing {
            what: "second stochastic sample",
            id: id.clone(),
        })
    });
    let scored = unl
        .iter()
        .zip(scores)
        .map(|(id, s)| s.map(|s| (id.as_str(), s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(top_n(scored, n, true))
}

/// Lowest current evaluation scores first.
pub fn oracle_select(ctx: &SelectionContext<'_>, n: usize) -> Result<SelectedBatch> {
    let n = check_request(ctx, n)?;
    let eval = ctx
        .per_example_eval
        .ok_or_else(|| Error::invalid("oracle needs per-example evaluation scores"))?;
    let scored = ctx
        .pool
        .unlabeled()
        .iter()
        .map(|id| {
            eval.get(id)
                .map(|s| (id.as_str(), *s))
                .ok_or_else(|| Error::Missing {
                    what: "evaluation score",
                    id: id.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(top_n(scored, n, false))
}
