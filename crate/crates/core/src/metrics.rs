//! Text-overlap evaluation metrics: BLEU (sentence and corpus), ROUGE-L,
//! iBLEU, G-Score, and the pairwise BLEU variance used as an uncertainty
//! signal.
//!
//! Sentence BLEU conventions:
//! - orders longer than the candidate are left out of the geometric mean,
//!   so a candidate identical to a reference always scores 1;
//! - a candidate sharing no unigram with the references scores 0;
//! - any other zero clipped precision at order n becomes
//!   `1 / (2 * max(1, candidate n-gram count))`.
//!
//! Corpus BLEU pools counts and lengths over all pairs and is unsmoothed.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::backend::Generation;
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::par;

/// Lowercased tokens; built only by [`tokenize`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercases, isolates every punctuation character as its own token and
/// splits on whitespace.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    TokenSeq(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Bleu,
    Ibleu,
    RougeL,
    GScore,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Bleu => "bleu",
            MetricKind::Ibleu => "ibleu",
            MetricKind::RougeL => "rouge_l",
            MetricKind::GScore => "g_score",
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu" => Ok(MetricKind::Bleu),
            "ibleu" => Ok(MetricKind::Ibleu),
            "rouge_l" => Ok(MetricKind::RougeL),
            "g_score" => Ok(MetricKind::GScore),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub ibleu_alpha: f64,
    pub bleu_max_order: usize,
    pub variance_bleu_order: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            ibleu_alpha: 0.8,
            bleu_max_order: 4,
            variance_bleu_order: 4,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ibleu_alpha) {
            return Err(Error::invalid("ibleu_alpha must lie in [0, 1]"));
        }
        if self.bleu_max_order == 0 || self.variance_bleu_order == 0 {
            return Err(Error::invalid("BLEU orders must be at least 1"));
        }
        Ok(())
    }
}

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and total candidate n-grams at order `n`.
fn clipped_stats(cand: &[String], refs: &[TokenSeq], n: usize) -> (usize, usize) {
    let total = cand.len().saturating_sub(n - 1);
    if total == 0 {
        return (0, 0);
    }
    let cand_counts = ngram_counts(cand, n);
    let mut max_ref: Counts<'_> = HashMap::new();
    for r in refs {
        for (gram, c) in ngram_counts(&r.0, n) {
            let slot = max_ref.entry(gram).or_insert(0);
            *slot = (*slot).max(c);
        }
    }
    let clipped = cand_counts
        .iter()
        .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
        .sum();
    (clipped, total)
}

/// Length of the reference closest to `c`; ties go to the shorter one.
fn closest_ref_len(c: usize, refs: &[TokenSeq]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    }
}

/// N-gram counts of one sequence for orders `1..=max_order`.
struct Profile<'a> {
    len: usize,
    counts: Vec<Counts<'a>>,
}

impl<'a> Profile<'a> {
    fn new(tokens: &'a [String], max_order: usize) -> Self {
        Profile {
            len: tokens.len(),
            counts: (1..=max_order.min(tokens.len()))
                .map(|n| ngram_counts(tokens, n))
                .collect(),
        }
    }

    fn count(&self, gram: &[String]) -> usize {
        self.counts
            .get(gram.len() - 1)
            .and_then(|c| c.get(gram))
            .copied()
            .unwrap_or(0)
    }
}

fn bleu_profiles(cand: &Profile<'_>, refs: &[Profile<'_>], max_order: usize) -> f64 {
    let c = cand.len;
    if c == 0 || refs.is_empty() || max_order == 0 {
        return 0.0;
    }
    let orders = max_order.min(c);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let total = c - n + 1;
        let clipped: usize = cand.counts[n - 1]
            .iter()
            .map(|(gram, &k)| k.min(refs.iter().map(|r| r.count(gram)).max().unwrap_or(0)))
            .sum();
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (2.0 * total as f64)
        };
        log_sum += p.ln();
    }
    let r = refs
        .iter()
        .map(|r| r.len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0);
    brevity_penalty(c, r) * (log_sum / orders as f64).exp()
}

pub fn bleu_sentence(candidate: &TokenSeq, references: &[TokenSeq], max_order: usize) -> f64 {
    let refs: Vec<Profile<'_>> = references
        .iter()
        .map(|r| Profile::new(&r.0, max_order))
        .collect();
    bleu_profiles(&Profile::new(&candidate.0, max_order), &refs, max_order)
}

/// Corpus BLEU over `(candidate, references)` pairs.
pub fn bleu_corpus(pairs: &[(TokenSeq, Vec<TokenSeq>)], max_order: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if max_order == 0 {
        return Err(Error::invalid("max_order must be at least 1"));
    }
    let mut clipped = vec![0usize; max_order];
    let mut totals = vec![0usize; max_order];
    let (mut c, mut r) = (0usize, 0usize);
    for (cand, refs) in pairs {
        if refs.is_empty() {
            return Err(Error::Empty("references"));
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
        for n in 1..=max_order {
            let (m, t) = clipped_stats(&cand.0, refs, n);
            clipped[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for (&m, &t) in clipped.iter().zip(&totals) {
        if t == 0 {
            continue;
        }
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
        orders += 1;
    }
    Ok(brevity_penalty(c, r) * (log_sum / orders as f64).exp())
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS F1 against each reference; the best reference wins.
pub fn rouge_l(candidate: &TokenSeq, references: &[TokenSeq]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .map(|r| {
            if r.is_empty() {
                return 0.0;
            }
            let lcs = lcs_len(&candidate.0, &r.0) as f64;
            let p = lcs / candidate.len() as f64;
            let rec = lcs / r.len() as f64;
            if p + rec == 0.0 {
                0.0
            } else {
                2.0 * p * rec / (p + rec)
            }
        })
        .fold(0.0, f64::max)
}

pub fn ibleu_from_parts(bleu_refs: f64, bleu_source: f64, alpha: f64) -> f64 {
    alpha * bleu_refs - (1.0 - alpha) * bleu_source
}

pub fn ibleu(
    candidate: &TokenSeq,
    references: &[TokenSeq],
    source: &TokenSeq,
    cfg: &MetricConfig,
) -> f64 {
    let order = cfg.bleu_max_order;
    ibleu_from_parts(
        bleu_sentence(candidate, references, order),
        bleu_sentence(candidate, std::slice::from_ref(source), order),
        cfg.ibleu_alpha,
    )
}

/// Geometric mean of a formality score and a similarity score.
pub fn g_score(formality: f64, similarity: f64) -> Result<f64> {
    for (name, v) in [("formality", formality), ("similarity", similarity)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} score {v} outside [0, 1]")));
        }
    }
    Ok((formality * similarity).sqrt())
}

/// Mean squared pairwise BLEU disagreement over ordered sample pairs.
pub fn bleu_variance(samples: &[TokenSeq], order: usize) -> Result<f64> {
    let t = samples.len();
    if t < 2 {
        return Err(Error::invalid(format!(
            "BLEU variance needs at least 2 samples, got {t}"
        )));
    }
    let profiles: Vec<Profile<'_>> = samples.iter().map(|s| Profile::new(&s.0, order)).collect();
    let mut acc = 0.0;
    for (i, a) in profiles.iter().enumerate() {
        for (j, b) in profiles.iter().enumerate() {
            if i != j {
                let d = 1.0 - bleu_profiles(a, std::slice::from_ref(b), order);
                acc += d * d;
            }
        }
    }
    Ok(acc / (t * (t - 1)) as f64)
}

/// Formality and similarity of one generation, for G-Score.
pub type AuxScores = BTreeMap<String, (f64, f64)>;

/// Sentence-level score of each example's generation. iBLEU uses the
/// example input as its source.
pub fn per_example_scores(
    kind: MetricKind,
    generations: &BTreeMap<String, Generation>,
    examples: &[Example],
    cfg: &MetricConfig,
    aux: Option<&AuxScores>,
) -> Result<BTreeMap<String, f64>> {
    if kind == MetricKind::GScore && aux.is_none() {
        return Err(Error::invalid("g_score needs formality and similarity scores"));
    }
    for ex in examples {
        if !generations.contains_key(&ex.id) {
            return Err(Error::Missing {
                what: "generation",
                id: ex.id.clone(),
            });
        }
    }
    let scored = par::map(examples, |ex| -> Result<f64> {
        let gen = &generations[&ex.id];
        let cand = tokenize(&gen.text);
        let refs: Vec<TokenSeq> = ex.references.iter().map(|r| tokenize(r)).collect();
        Ok(match kind {
            MetricKind::Bleu => bleu_sentence(&cand, &refs, cfg.bleu_max_order),
            MetricKind::Ibleu => ibleu(&cand, &refs, &tokenize(&ex.input), cfg),
            MetricKind::RougeL => rouge_l(&cand, &refs),
            MetricKind::GScore => {
                let (f, s) = aux
                    .and_then(|a| a.get(&ex.id))
                    .copied()
                    .ok_or_else(|| Error::Missing {
                        what: "auxiliary scores",
                        id: ex.id.clone(),
                    })?;
                g_score(f, s)?
            }
        })
    });
    examples
        .iter()
        .zip(scored)
        .map(|(ex, s)| s.map(|s| (ex.id.clone(), s)))
        .collect()
}
