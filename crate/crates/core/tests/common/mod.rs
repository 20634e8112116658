//! Independent reference implementations used as test oracles, plus the
//! drivers that compare them with the library. The oracles favour
//! obviousness over speed and share no code with it.

#![allow(dead_code)]

use alnlg::corpus::PoolState;
use alnlg::geometry::EmbeddingSet;
use alnlg::seeding;
use alnlg::strategies::{coreset_greedy, SelectionContext};
use rand::Rng;

/// Occurrences of `gram` in `seq`, by linear scan.
fn occurrences(seq: &[&str], gram: &[&str]) -> usize {
    if gram.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - gram.len())
        .filter(|&i| &seq[i..i + gram.len()] == gram)
        .count()
}

/// Sentence BLEU by direct n-gram counting, with the library's documented
/// conventions: orders beyond the candidate length are skipped, no unigram
/// match scores 0, other zero precisions become 1/(2·total).
pub fn naive_bleu(cand: &[&str], refs: &[Vec<&str>], max_order: usize) -> f64 {
    if cand.is_empty() || refs.is_empty() || max_order == 0 {
        return 0.0;
    }
    let orders = max_order.min(cand.len());
    let mut product = 1.0;
    for n in 1..=orders {
        let grams: Vec<&[&str]> = cand.windows(n).collect();
        let mut distinct: Vec<&[&str]> = Vec::new();
        for g in &grams {
            if !distinct.contains(g) {
                distinct.push(g);
            }
        }
        let clipped: usize = distinct
            .iter()
            .map(|g| {
                let in_refs = refs.iter().map(|r| occurrences(r, g)).max().unwrap();
                occurrences(cand, g).min(in_refs)
            })
            .sum();
        let total = grams.len();
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (2.0 * total as f64)
        };
        product *= p;
    }
    let c = cand.len();
    let mut r = refs[0].len();
    for rf in refs {
        let l = rf.len();
        if l.abs_diff(c) < r.abs_diff(c) || (l.abs_diff(c) == r.abs_diff(c) && l < r) {
            r = l;
        }
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * product.powf(1.0 / orders as f64)
}

/// LCS length by the full dynamic-programming table.
pub fn naive_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn naive_rouge_l(cand: &[&str], refs: &[Vec<&str>]) -> f64 {
    let mut best = 0.0f64;
    for r in refs {
        if cand.is_empty() || r.is_empty() {
            continue;
        }
        let l = naive_lcs(cand, r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / cand.len() as f64;
        let rec = l / r.len() as f64;
        best = best.max(2.0 * p * rec / (p + rec));
    }
    best
}

/// Every sequence over `alphabet` with length at most `max_len`.
pub fn all_sequences<'a>(alphabet: &[&'a str], max_len: usize) -> Vec<Vec<&'a str>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in alphabet {
                let mut t: Vec<&str> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Two-sided signed-rank p-value by enumerating all 2^n sign patterns of
/// the ranks of `|diffs|`. Magnitudes must be distinct and nonzero.
pub fn enumerated_wilcoxon(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diffs[a].abs().partial_cmp(&diffs[b].abs()).unwrap());
    let mut rank = vec![0u32; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as u32 + 1;
    }
    let w_plus: u32 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| rank[i]).sum();
    let total: u32 = rank.iter().sum();
    let observed = w_plus.min(total - w_plus);
    let patterns = 1u64 << n;
    let extreme = (0..patterns)
        .filter(|mask| {
            let w: u32 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| rank[i]).sum();
            w.min(total - w) <= observed
        })
        .count();
    (extreme as f64 / patterns as f64).min(1.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// k-center greedy from scratch: each step recomputes every candidate's
/// distance to the whole chosen-or-labeled set and takes the farthest,
/// ties to the smaller id. `start` seeds the set when nothing is labeled.
pub fn brute_force_kcenter(
    points: &[(String, Vec<f64>)],
    labeled: &[usize],
    start: Option<usize>,
    n: usize,
) -> Vec<String> {
    let mut centres: Vec<usize> = labeled.to_vec();
    let mut chosen: Vec<usize> = Vec::new();
    if let Some(s) = start {
        centres.push(s);
        chosen.push(s);
    }
    let candidates: Vec<usize> = (0..points.len()).filter(|i| !labeled.contains(i)).collect();
    while chosen.len() < n.min(candidates.len()) {
        let mut best: Option<(usize, f64)> = None;
        for &i in &candidates {
            if chosen.contains(&i) {
                continue;
            }
            let d = centres
                .iter()
                .map(|&c| euclid(&points[i].1, &points[c].1))
                .fold(f64::INFINITY, f64::min);
            best = match best {
                None => Some((i, d)),
                Some((b, bd)) if d > bd || (d == bd && points[i].0 < points[b].0) => Some((i, d)),
                keep => keep,
            };
        }
        let (pick, _) = best.unwrap();
        chosen.push(pick);
        centres.push(pick);
    }
    chosen.into_iter().map(|i| points[i].0.clone()).collect()
}

/// Random instance: points, labeled indices, batch size. Every third
/// instance uses small integer coordinates so distance ties are common.
fn instance(seed: u64) -> (Vec<(String, Vec<f64>)>, Vec<usize>, usize) {
    let mut rng = seeding::rng(seed);
    let size = rng.random_range(2..=50);
    let dim = rng.random_range(1..=8);
    let grid = seed % 3 == 0;
    let points: Vec<(String, Vec<f64>)> = (0..size)
        .map(|i| {
            let v = (0..dim)
                .map(|_| {
                    if grid {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect();
            (format!("x{i:02}"), v)
        })
        .collect();
    let n_lab = if rng.random_bool(0.5) { 0 } else { rng.random_range(1..size) };
    let mut labeled: Vec<usize> = rand::seq::index::sample(&mut rng, size, n_lab).into_vec();
    labeled.sort_unstable();
    let n = rng.random_range(1..=size);
    (points, labeled, n)
}

/// Runs the library and the oracle on one instance; returns both sequences.
pub fn coreset_vs_brute_force(seed: u64) -> (Vec<String>, Vec<String>) {
    let (points, labeled, n) = instance(seed);
    let dim = points[0].1.len();
    let emb = EmbeddingSet::from_vectors(dim, points.iter().cloned()).unwrap();
    let lab_ids: Vec<String> = labeled.iter().map(|&i| points[i].0.clone()).collect();
    let unl_ids: Vec<String> = (0..points.len())
        .filter(|i| !labeled.contains(i))
        .map(|i| points[i].0.clone())
        .collect();
    let pool = PoolState::from_parts("t", unl_ids.clone(), lab_ids).unwrap();
    let mut ctx = SelectionContext::new(&pool, seed ^ 0x5eed);
    ctx.embeddings = Some(&emb);
    let got = coreset_greedy(&ctx, n).unwrap().ids;
    let start = if labeled.is_empty() {
        // The jump-start point is a uniform draw; check that it is one, then
        // let the oracle continue from it.
        let first = &got[0];
        assert!(unl_ids.contains(first));
        Some(points.iter().position(|(id, _)| id == first).unwrap())
    } else {
        None
    };
    (got, brute_force_kcenter(&points, &labeled, start, n))
}
