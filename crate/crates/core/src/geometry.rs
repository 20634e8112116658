//! Vector-space primitives over example embeddings.
//!
//! Embeddings are used as produced by the backend, without normalization.
//! All accumulation is in `f64`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-dimension vectors keyed by example id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(EmbeddingSet {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn from_vectors(
        dim: usize,
        vectors: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut set = Self::new(dim)?;
        for (id, v) in vectors {
            set.insert(id, v)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, id: String, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite embedding for `{id}`")));
        }
        self.vectors.insert(id, v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Missing {
                what: "embedding",
                id: id.to_string(),
            })
    }

    /// Vectors for `ids`, in the given order.
    pub fn rows<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&[f64]>> {
        ids.iter().map(|id| self.get(id.as_ref())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Applies `f` to every vector. Used for rigid-motion and scaling checks.
    pub fn map_vectors(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        Self::from_vectors(
            self.dim,
            self.vectors.iter().map(|(k, v)| (k.clone(), f(v))),
        )
    }
}

/// L2 distance without length checks; callers guarantee equal lengths.
#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(dist(a, b))
}

pub fn centroid<V: AsRef<[f64]>>(set: &[V]) -> Result<Vec<f64>> {
    let first = set.first().ok_or(Error::Empty("centroid of no vectors"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0; dim];
    for v in set {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = set.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mean of the `k` smallest values; `values.len() >= k >= 1`.
pub(crate) fn mean_of_smallest(values: &mut [f64], k: usize) -> f64 {
    debug_assert!(k >= 1 && k <= values.len());
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let smallest = &mut values[..k];
    // Sum in sorted order so the result does not depend on the selection's
    // internal permutation.
    smallest.sort_unstable_by(f64::total_cmp);
    smallest.iter().sum::<f64>() / k as f64
}

/// Mean distance from `x` to its `k` nearest neighbours among `pool`,
/// excluding `x` itself (by id). Other ids at the same coordinates count as
/// neighbours at distance zero.
pub fn knn_mean_distance<S: AsRef<str>>(
    x: &str,
    pool: &[S],
    emb: &EmbeddingSet,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let xv = emb.get(x)?;
    let mut dists = Vec::with_capacity(pool.len());
    for id in pool {
        let id = id.as_ref();
        if id != x {
            dists.push(dist(xv, emb.get(id)?));
        }
    }
    if dists.len() < k {
        return Err(Error::invalid(format!(
            "need {k} neighbours for `{x}`, pool has {}",
            dists.len()
        )));
    }
    Ok(mean_of_smallest(&mut dists, k))
}

pub fn min_distance_to_set<S: AsRef<str>>(
    x: &str,
    anchors: &[S],
    emb: &EmbeddingSet,
) -> Result<f64> {
    if anchors.is_empty() {
        return Err(Error::Empty("anchor set"));
    }
    let xv = emb.get(x)?;
    let mut best = f64::INFINITY;
    for a in anchors {
        best = best.min(dist(xv, emb.get(a.as_ref())?));
    }
    Ok(best)
}
