//! Dataset ingestion, score-threshold filtering and the labeled/unlabeled
//! pools driven by the active learning loop.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// One task instance: an input text and one or more reference outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub input: String,
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Example {
    pub fn new(id: impl Into<String>, input: impl Into<String>, references: Vec<String>) -> Self {
        Example {
            id: id.into(),
            input: input.into(),
            references,
            meta: BTreeMap::new(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.input.trim().is_empty() {
            return Err("empty input".into());
        }
        if self.references.is_empty() {
            return Err("empty references".into());
        }
        if self.references.iter().any(|r| r.trim().is_empty()) {
            return Err("blank reference".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub examples: Vec<Example>,
}

impl DatasetSplit {
    /// Builds a split, checking every example and id uniqueness.
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            ex.validate()
                .map_err(|m| Error::invalid(format!("example `{}`: {m}", ex.id)))?;
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        Ok(DatasetSplit {
            name: name.into(),
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    /// Id → example lookup table.
    pub fn index(&self) -> HashMap<&str, &Example> {
        self.examples.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    /// Keeps `cap` examples chosen uniformly from `rng_seed`, in file order.
    pub fn subsample(&self, cap: usize, rng_seed: u64) -> DatasetSplit {
        let chosen = sample_sorted(self.len(), cap, rng_seed);
        DatasetSplit {
            name: self.name.clone(),
            examples: chosen.into_iter().map(|i| self.examples[i].clone()).collect(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    input: Option<String>,
    references: Option<Vec<String>>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Reads a line-delimited JSON dataset. Records without an `id` get
/// `line-NNNNNN` from their 1-based line number. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>, split_name: &str) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, split_name)
}

pub fn parse_dataset(text: &str, split_name: &str) -> Result<DatasetSplit> {
    let mut examples = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
        let input = raw.input.ok_or_else(|| perr("missing input".into()))?;
        let references = raw
            .references
            .ok_or_else(|| perr("missing references".into()))?;
        let example = Example {
            id: raw.id.unwrap_or_else(|| format!("line-{line_no:06}")),
            input,
            references,
            meta: raw.meta,
        };
        example.validate().map_err(perr)?;
        if !seen.insert(example.id.clone()) {
            return Err(perr(format!("duplicate id `{}`", example.id)));
        }
        examples.push(example);
    }
    Ok(DatasetSplit {
        name: split_name.to_string(),
        examples,
    })
}

/// Serializes a split back to the line-delimited record format.
pub fn write_dataset(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for ex in &split.examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Keeps the examples whose score is strictly greater than `threshold`.
pub fn filter_by_score(
    split: &DatasetSplit,
    scores: &HashMap<String, f64>,
    threshold: f64,
) -> Result<DatasetSplit> {
    let mut kept = Vec::new();
    for ex in &split.examples {
        let score = scores.get(&ex.id).ok_or_else(|| Error::Missing {
            what: "score",
            id: ex.id.clone(),
        })?;
        if *score > threshold {
            kept.push(ex.clone());
        }
    }
    Ok(DatasetSplit {
        name: split.name.clone(),
        examples: kept,
    })
}

/// Uniform sample of `min(cap, len)` indices, returned in ascending order.
fn sample_sorted(len: usize, cap: usize, seed: u64) -> Vec<usize> {
    let amount = cap.min(len);
    if amount == len {
        return (0..len).collect();
    }
    let mut rng = seeding::rng(seed);
    let mut picked = index::sample(&mut rng, len, amount).into_vec();
    picked.sort_unstable();
    picked
}

/// Disjoint labeled (L_D) and unlabeled (U_D) pools over one split.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    source: String,
    unlabeled: Vec<String>,
    labeled: Vec<String>,
}

impl PoolState {
    /// Caps the unlabeled pool at `cap` examples drawn from the `pool`
    /// sub-stream of `seed`. The labeled pool starts empty.
    pub fn init(train: &DatasetSplit, cap: usize, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        if cap == 0 {
            return Err(Error::invalid("pool cap must be at least 1"));
        }
        let picked = sample_sorted(train.len(), cap, seeding::derive(seed, "pool"));
        Ok(PoolState {
            source: train.name.clone(),
            unlabeled: picked
                .into_iter()
                .map(|i| train.examples[i].id.clone())
                .collect(),
            labeled: Vec::new(),
        })
    }

    /// Pool with explicit contents; used by tests and analyses.
    pub fn from_parts(
        source: impl Into<String>,
        unlabeled: Vec<String>,
        labeled: Vec<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in unlabeled.iter().chain(&labeled) {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(PoolState {
            source: source.into(),
            unlabeled,
            labeled,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn unlabeled(&self) -> &[String] {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &[String] {
        &self.labeled
    }

    /// Moves `ids` from U_D to the end of L_D. Either every id moves or
    /// nothing changes.
    pub fn move_to_labeled(&mut self, ids: &[String]) -> Result<()> {
        if ids.is_empty() {
            return Ok(());
        }
        let unlabeled: HashSet<&str> = self.unlabeled.iter().map(String::as_str).collect();
        let mut batch = HashSet::with_capacity(ids.len());
        for id in ids {
            if !unlabeled.contains(id.as_str()) || !batch.insert(id.as_str()) {
                return Err(Error::NotUnlabeled(id.clone()));
            }
        }
        self.unlabeled.retain(|id| !batch.contains(id.as_str()));
        self.labeled.extend(ids.iter().cloned());
        Ok(())
    }
}
