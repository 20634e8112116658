//! Synthetic inputs for exercising the pipeline without real corpora.
//!
//! [`text_dataset`] builds topic-structured generation tasks: each input is a
//! unique entity token followed by word runs from one topic (or, for a
//! fraction of examples, from two topics), and each reference is the entity
//! followed by the answer words of the example's main topic. Mixed-topic
//! inputs are the ambiguous cases.
//!
//! [`planted_clusters`] draws Gaussian clusters plus uniform outliers in
//! embedding space.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Example};
use crate::error::Result;
use crate::geometry::EmbeddingSet;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextTaskConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub phrases_per_input: usize,
    pub phrase_len: usize,
    /// Fraction of inputs mixing a second topic in.
    pub mixed_fraction: f64,
    pub seed: u64,
}

impl Default for TextTaskConfig {
    fn default() -> Self {
        TextTaskConfig {
            topics: 12,
            words_per_topic: 24,
            phrases_per_input: 4,
            phrase_len: 3,
            mixed_fraction: 0.3,
            seed: 0,
        }
    }
}

fn topic_word(topic: usize, j: usize) -> String {
    format!("t{topic:02}w{j:02}")
}

/// Answer words of a topic; length varies between 4 and 8 by topic.
fn topic_answer(topic: usize) -> Vec<String> {
    (0..4 + topic % 5).map(|j| format!("t{topic:02}a{j}")).collect()
}

fn make_example(cfg: &TextTaskConfig, index: usize, prefix: &str, rng: &mut impl Rng) -> Example {
    let topic = rng.random_range(0..cfg.topics);
    let mixed = cfg.topics > 1 && rng.random_bool(cfg.mixed_fraction);
    let other = if mixed {
        (topic + rng.random_range(1..cfg.topics)) % cfg.topics
    } else {
        topic
    };
    let mut phrase_topics: Vec<usize> = (0..cfg.phrases_per_input)
        .map(|p| if p % 2 == 1 { other } else { topic })
        .collect();
    phrase_topics.shuffle(rng);

    let entity = format!("{prefix}e{index:05}");
    let mut input = vec![entity.clone()];
    for t in phrase_topics {
        let start = rng.random_range(0..=cfg.words_per_topic - cfg.phrase_len);
        input.extend((start..start + cfg.phrase_len).map(|j| topic_word(t, j)));
    }
    let mut reference = vec![entity];
    reference.extend(topic_answer(topic));

    let mut ex = Example::new(format!("{prefix}{index:05}"), input.join(" "), vec![reference.join(" ")]);
    ex.meta.insert("topic".into(), topic.to_string());
    ex.meta.insert("mixed".into(), mixed.to_string());
    ex
}

/// Train and test splits drawn from the same task distribution.
pub fn text_dataset(cfg: &TextTaskConfig, train: usize, test: usize) -> Result<(DatasetSplit, DatasetSplit)> {
    let mut rng = seeding::substream(cfg.seed, "synth/text");
    let train_ex = (0..train).map(|i| make_example(cfg, i, "tr", &mut rng)).collect();
    let test_ex = (0..test).map(|i| make_example(cfg, i, "te", &mut rng)).collect();
    Ok((DatasetSplit::new("train", train_ex)?, DatasetSplit::new("test", test_ex)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedClusters {
    pub ids: Vec<String>,
    pub embeddings: EmbeddingSet,
    /// Ids of the uniform outliers.
    pub outliers: Vec<String>,
}

/// `n` points in `dim` dimensions: `clusters` unit-variance Gaussian blobs
/// with centres in [-10, 10]^dim, plus `outlier_fraction·n` points uniform
/// in [-20, 20]^dim.
pub fn planted_clusters(
    n: usize,
    dim: usize,
    clusters: usize,
    outlier_fraction: f64,
    seed: u64,
) -> Result<PlantedClusters> {
    let mut rng = seeding::substream(seed, "synth/clusters");
    let centres: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
        .collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n_out = (n as f64 * outlier_fraction).round() as usize;
    let mut ids = Vec::with_capacity(n);
    let mut outliers = Vec::with_capacity(n_out);
    let mut vectors = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("p{i:05}");
        let v: Vec<f64> = if i < n_out {
            outliers.push(id.clone());
            (0..dim).map(|_| rng.random_range(-20.0..20.0)).collect()
        } else {
            let c = &centres[i % clusters];
            c.iter().map(|m| m + unit.sample(&mut rng)).collect()
        };
        ids.push(id.clone());
        vectors.push((id, v));
    }
    Ok(PlantedClusters {
        ids,
        embeddings: EmbeddingSet::from_vectors(dim, vectors)?,
        outliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_dataset_is_deterministic_and_valid() {
        let cfg = TextTaskConfig::default();
        let (a, b) = text_dataset(&cfg, 50, 10).unwrap();
        assert_eq!((a.len(), b.len()), (50, 10));
        assert_eq!(text_dataset(&cfg, 50, 10).unwrap().0, a);
        let ex = &a.examples[0];
        assert_eq!(ex.input.split(' ').count(), 1 + cfg.phrases_per_input * cfg.phrase_len);
        assert!(ex.references[0].starts_with(ex.input.split(' ').next().unwrap()));
        let mixed = a.examples.iter().filter(|e| e.meta["mixed"] == "true").count();
        assert!(mixed > 5 && mixed < 30, "{mixed}");
    }

    #[test]
    fn planted_clusters_shape() {
        let p = planted_clusters(1000, 16, 3, 0.05, 7).unwrap();
        assert_eq!(p.ids.len(), 1000);
        assert_eq!(p.outliers.len(), 50);
        assert_eq!(p.embeddings.dim(), 16);
        assert_eq!(planted_clusters(1000, 16, 3, 0.05, 7).unwrap(), p);
    }
}
