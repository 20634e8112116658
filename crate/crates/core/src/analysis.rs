//! Post-hoc analyses: batch geometry (outlier score, diversity), how a batch
//! relates to the model's current per-example performance, relative gains
//! over random selection, and the paired significance machinery.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::geometry::{centroid, dist, knn_mean_distance, EmbeddingSet};
use crate::{par, seeding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProfile {
    pub strategy: String,
    pub outlier_score: f64,
    pub diversity: f64,
    pub batch_size: usize,
}

/// Mean KNN distance of the batch members within the unlabeled pool. High
/// values mean the batch sits in sparse regions.
pub fn batch_outlier_score<S: AsRef<str> + Sync>(
    batch: &[S],
    pool: &[S],
    emb: &EmbeddingSet,
    k: usize,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if pool.len() <= k {
        return Err(Error::invalid(format!(
            "outlier score needs more than {k} pool points, got {}",
            pool.len()
        )));
    }
    let per_point = par::map(batch, |x| knn_mean_distance(x.as_ref(), pool, emb, k));
    let mut sum = 0.0;
    for d in per_point {
        sum += d?;
    }
    Ok(sum / batch.len() as f64)
}

/// Mean distance of the batch members from the batch centroid.
pub fn batch_diversity<S: AsRef<str>>(batch: &[S], emb: &EmbeddingSet) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let rows = emb.rows(batch)?;
    let c = centroid(&rows)?;
    Ok(rows.iter().map(|r| dist(r, &c)).sum::<f64>() / rows.len() as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `(mean(batch) - mean(pool)) / std(pool)`, population standard deviation.
pub fn relative_selection_performance(
    batch_scores: &BTreeMap<String, f64>,
    pool_scores: &BTreeMap<String, f64>,
) -> Result<f64> {
    if batch_scores.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if pool_scores.len() < 2 {
        return Err(Error::invalid("pool needs at least two scored examples"));
    }
    if let Some(id) = batch_scores.keys().find(|id| !pool_scores.contains_key(*id)) {
        return Err(Error::UnknownId(id.clone()));
    }
    let pool: Vec<f64> = pool_scores.values().copied().collect();
    let batch: Vec<f64> = batch_scores.values().copied().collect();
    let mu = mean(&pool);
    let var = pool.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / pool.len() as f64;
    if var <= 0.0 {
        return Err(Error::invalid("pool scores have zero spread"));
    }
    Ok((mean(&batch) - mu) / var.sqrt())
}

/// One (iteration, repetition) observation of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub repetition: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeGain {
    pub iteration: usize,
    pub repetition: usize,
    /// `None` when random selection gained nothing at this point.
    pub percent: Option<f64>,
}

/// Percentage change of the strategy's gain over zero-shot relative to the
/// random baseline's gain, per aligned (iteration, repetition) point.
/// `zero_shot` maps repetition → zero-shot value.
pub fn relative_gains(
    strategy: &[CurvePoint],
    random: &[CurvePoint],
    zero_shot: &BTreeMap<usize, f64>,
) -> Result<Vec<RelativeGain>> {
    let baseline: BTreeMap<(usize, usize), f64> = random
        .iter()
        .map(|p| ((p.iteration, p.repetition), p.value))
        .collect();
    if baseline.len() != strategy.len() {
        return Err(Error::invalid(format!(
            "{} strategy points but {} baseline points",
            strategy.len(),
            baseline.len()
        )));
    }
    strategy
        .iter()
        .map(|p| {
            let r = baseline.get(&(p.iteration, p.repetition)).ok_or_else(|| {
                Error::invalid(format!(
                    "no baseline point at iteration {} repetition {}",
                    p.iteration, p.repetition
                ))
            })?;
            let z = zero_shot.get(&p.repetition).ok_or_else(|| {
                Error::invalid(format!("no zero-shot value for repetition {}", p.repetition))
            })?;
            let gain_s = p.value - z;
            let gain_r = r - z;
            Ok(RelativeGain {
                iteration: p.iteration,
                repetition: p.repetition,
                percent: (gain_r != 0.0).then(|| 100.0 * (gain_s - gain_r) / gain_r),
            })
        })
        .collect()
}

/// Strategy and baseline values aligned by (iteration, repetition).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries {
    pub strategy_values: Vec<f64>,
    pub baseline_values: Vec<f64>,
}

impl PairedSeries {
    pub fn new(strategy_values: Vec<f64>, baseline_values: Vec<f64>) -> Result<Self> {
        if strategy_values.len() != baseline_values.len() {
            return Err(Error::invalid("paired series have different lengths"));
        }
        Ok(PairedSeries {
            strategy_values,
            baseline_values,
        })
    }

    /// Series whose strategy-minus-baseline differences are `diffs`.
    pub fn from_differences(diffs: &[f64]) -> Self {
        PairedSeries {
            strategy_values: diffs.to_vec(),
            baseline_values: vec![0.0; diffs.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.strategy_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategy_values.is_empty()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.strategy_values
            .iter()
            .zip(&self.baseline_values)
            .map(|(s, b)| s - b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// Strategy values tend to exceed the baseline.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Nonzero differences that entered the ranking.
    pub n_effective: usize,
    pub zeros_discarded: usize,
    /// Set when every difference was zero.
    pub degenerate: bool,
    pub method: PMethod,
}

/// Largest effective sample size that uses the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

/// Average ranks (doubled, so they stay integral) of `abs`, ascending.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // Positions i..=j hold 1-based ranks i+1..=j+1; twice their mean is i+j+2.
        let r2 = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of sign assignments reaching each doubled rank sum.
fn null_counts(ranks: &[u64]) -> Vec<u64> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Paired Wilcoxon signed-rank test on strategy − baseline differences.
/// Zero differences are dropped; tied magnitudes share average ranks.
pub fn wilcoxon_signed_rank(pairs: &PairedSeries, alternative: Alternative) -> WilcoxonResult {
    let diffs = pairs.differences();
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let zeros = diffs.len() - nonzero.len();
    let n = nonzero.len();
    if n == 0 {
        return WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n_effective: 0,
            zeros_discarded: zeros,
            degenerate: true,
            method: PMethod::Exact,
        };
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let w_plus2: u64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total2 = (n * (n + 1)) as u64;
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;

    let (p_value, method) = if n <= EXACT_MAX_N {
        let counts = null_counts(&ranks);
        let denom = 2f64.powi(n as i32);
        let lower: u64 = counts[..=w_plus2 as usize].iter().sum();
        let upper: u64 = counts[w_plus2 as usize..].iter().sum();
        let (pl, pu) = (lower as f64 / denom, upper as f64 / denom);
        let p = match alternative {
            Alternative::TwoSided => (2.0 * pl.min(pu)).min(1.0),
            Alternative::Greater => pu,
            Alternative::Less => pl,
        };
        (p, PMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
        let upper_tail = |z: f64| 0.5 * erfc(z / std::f64::consts::SQRT_2);
        let p = match alternative {
            Alternative::TwoSided => {
                let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * upper_tail(z)).min(1.0)
            }
            Alternative::Greater => upper_tail((w_plus - mean - 0.5) / sd),
            Alternative::Less => 1.0 - upper_tail((w_plus - mean + 0.5) / sd),
        };
        (p, PMethod::Normal)
    };
    WilcoxonResult {
        p_value,
        w_plus,
        w_minus,
        n_effective: n,
        zeros_discarded: zeros,
        degenerate: false,
        method,
    }
}

/// `min(1, p·m)` for a family of `m` tests.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m.max(1) as f64).min(1.0)
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    if !(0.0 < level && level < 1.0) || resamples == 0 {
        return Err(Error::invalid("bootstrap needs 0 < level < 1 and resamples > 0"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len();
    let mut rng = seeding::rng(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            // A resample mean always lies within the data range.
            (s / n as f64).clamp(lo, hi)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((quantile(&means, alpha / 2.0), quantile(&means, 1.0 - alpha / 2.0)))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    } else {
        sorted[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn line(points: &[(&str, f64)]) -> EmbeddingSet {
        EmbeddingSet::from_vectors(1, points.iter().map(|(k, v)| (k.to_string(), vec![*v])))
            .unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn outlier_score_cases() {
        let e = line(&[("a", 0.0), ("b", 1.0), ("c", 3.0)]);
        let pool = s(&["a", "b", "c"]);
        assert_eq!(batch_outlier_score(&s(&["a", "c"]), &pool, &e, 1).unwrap(), 1.5);
        assert!(batch_outlier_score(&[], &pool, &e, 1).is_err());
        assert!(batch_outlier_score(&s(&["a"]), &pool, &e, 3).is_err());

        // Two planted clusters: a tight one and isolated points.
        let mut pts: Vec<(String, f64)> = (0..10).map(|i| (format!("d{i}"), i as f64 * 0.01)).collect();
        pts.extend((0..4).map(|i| (format!("o{i}"), 10.0 + 7.0 * i as f64)));
        let e = EmbeddingSet::from_vectors(1, pts.iter().map(|(k, v)| (k.clone(), vec![*v]))).unwrap();
        let pool: Vec<String> = pts.iter().map(|p| p.0.clone()).collect();
        let dense = batch_outlier_score(&s(&["d2", "d5"]), &pool, &e, 2).unwrap();
        let sparse = batch_outlier_score(&s(&["o1", "o2"]), &pool, &e, 2).unwrap();
        assert!(dense < sparse);

        let dup = line(&[("x", 4.0), ("y", 4.0), ("z", 9.0)]);
        assert_eq!(batch_outlier_score(&s(&["x"]), &s(&["x", "y", "z"]), &dup, 1).unwrap(), 0.0);
    }

    #[test]
    fn diversity_cases() {
        let e = EmbeddingSet::from_vectors(
            2,
            [("a".to_string(), vec![0.0, 0.0]), ("b".to_string(), vec![2.0, 0.0])],
        )
        .unwrap();
        assert_eq!(batch_diversity(&s(&["a", "b"]), &e).unwrap(), 1.0);
        let same = line(&[("a", 3.0), ("b", 3.0)]);
        assert_eq!(batch_diversity(&s(&["a", "b"]), &same).unwrap(), 0.0);
        assert!(batch_diversity::<String>(&[], &e).is_err());
        let scaled = e.map_vectors(|v| v.iter().map(|x| -3.0 * x).collect()).unwrap();
        assert_eq!(batch_diversity(&s(&["a", "b"]), &scaled).unwrap(), 3.0);
    }

    fn scores(v: &[(&str, f64)]) -> BTreeMap<String, f64> {
        v.iter().map(|(k, x)| (k.to_string(), *x)).collect()
    }

    #[test]
    fn relative_performance_cases() {
        // Pool {0.4, 0.6}: mean 0.5, population std 0.1.
        let pool = scores(&[("a", 0.4), ("b", 0.6)]);
        let v = relative_selection_performance(&scores(&[("a", 0.4)]), &pool).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        assert!(relative_selection_performance(&pool, &pool).unwrap().abs() < 1e-12);
        assert!(relative_selection_performance(&scores(&[("b", 0.6)]), &pool).unwrap() > 0.0);
        let flat = scores(&[("a", 0.5), ("b", 0.5)]);
        assert!(relative_selection_performance(&scores(&[("a", 0.5)]), &flat).is_err());
        assert!(relative_selection_performance(&scores(&[("z", 0.5)]), &pool).is_err());
    }

    #[test]
    fn relative_gain_cases() {
        let p = |iteration, value| CurvePoint { iteration, repetition: 1, value };
        let zs = BTreeMap::from([(1, 0.0)]);
        let g = relative_gains(&[p(1, 12.0)], &[p(1, 10.0)], &zs).unwrap();
        assert!((g[0].percent.unwrap() - 20.0).abs() < 1e-12);
        let g = relative_gains(&[p(1, 7.0)], &[p(1, 7.0)], &zs).unwrap();
        assert_eq!(g[0].percent, Some(0.0));
        let g = relative_gains(&[p(1, 3.0)], &[p(1, 0.0)], &zs).unwrap();
        assert_eq!(g[0].percent, None);
        assert!(relative_gains(&[p(2, 3.0)], &[p(1, 0.0)], &zs).is_err());

        let grid = |v: f64| -> Vec<CurvePoint> {
            (1..=18)
                .flat_map(|i| (1..=5).map(move |j| CurvePoint { iteration: i, repetition: j, value: v + i as f64 }))
                .collect()
        };
        let zs: BTreeMap<usize, f64> = (1..=5).map(|j| (j, 0.0)).collect();
        assert_eq!(relative_gains(&grid(1.0), &grid(0.5), &zs).unwrap().len(), 90);
    }

    #[test]
    fn wilcoxon_small_exact_case() {
        let r = wilcoxon_signed_rank(&PairedSeries::from_differences(&[1.0, 2.0, 3.0]), Alternative::TwoSided);
        assert_eq!(r.p_value, 0.25);
        assert_eq!((r.w_plus, r.w_minus), (6.0, 0.0));
        assert_eq!(r.method, PMethod::Exact);
        let g = wilcoxon_signed_rank(&PairedSeries::from_differences(&[1.0, 2.0, 3.0]), Alternative::Greater);
        assert_eq!(g.p_value, 0.125);
        let l = wilcoxon_signed_rank(&PairedSeries::from_differences(&[1.0, 2.0, 3.0]), Alternative::Less);
        assert_eq!(l.p_value, 1.0);
    }

    #[test]
    fn wilcoxon_degenerate_and_zeros() {
        let r = wilcoxon_signed_rank(&PairedSeries::from_differences(&[0.0, 0.0]), Alternative::TwoSided);
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        let r = wilcoxon_signed_rank(&PairedSeries::from_differences(&[0.0, 1.0, 2.0, 3.0]), Alternative::TwoSided);
        assert_eq!((r.zeros_discarded, r.n_effective, r.p_value), (1, 3, 0.25));
    }

    #[test]
    fn wilcoxon_ties_use_average_ranks() {
        // |d| = 1, 1, 2 -> ranks 1.5, 1.5, 3.
        let r = wilcoxon_signed_rank(&PairedSeries::from_differences(&[1.0, -1.0, 2.0]), Alternative::TwoSided);
        assert_eq!((r.w_plus, r.w_minus), (4.5, 1.5));
        // Sign patterns with W+ <= 1.5: {}, {1.5} x2 -> 3 of 8, two-sided 0.75.
        assert_eq!(r.p_value, 0.75);
    }

    #[test]
    fn wilcoxon_normal_approximation() {
        // 30 positive differences 1..=30: W+ = 465, mean 232.5, var = 30*31*61/24.
        let d: Vec<f64> = (1..=30).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&PairedSeries::from_differences(&d), Alternative::TwoSided);
        assert_eq!(r.method, PMethod::Normal);
        let sd = (30.0f64 * 31.0 * 61.0 / 24.0).sqrt();
        let z = (465.0 - 232.5 - 0.5) / sd;
        let expected = erfc(z / std::f64::consts::SQRT_2);
        assert!((r.p_value - expected).abs() < 1e-15);
        assert!(r.p_value < 1e-5);
        // Balanced signs give a large p.
        let alt: Vec<f64> = (1..=40).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let r = wilcoxon_signed_rank(&PairedSeries::from_differences(&alt), Alternative::TwoSided);
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn bonferroni_cases() {
        assert!((bonferroni(0.01, 4) - 0.04).abs() < 1e-15);
        assert_eq!(bonferroni(0.5, 4), 1.0);
        assert_eq!(bonferroni(0.037, 1), 0.037);
    }

    #[test]
    fn bootstrap_cases() {
        assert_eq!(bootstrap_ci(&[0.1; 5], 0.95, 10_000, 1).unwrap(), (0.1, 0.1));
        assert_eq!(bootstrap_ci(&[2.5], 0.95, 100, 1).unwrap(), (2.5, 2.5));
        let v = [0.1, 0.5, 0.2, 0.9, 0.4];
        assert_eq!(bootstrap_ci(&v, 0.95, 2000, 3).unwrap(), bootstrap_ci(&v, 0.95, 2000, 3).unwrap());
        assert!(bootstrap_ci(&[], 0.95, 10, 0).is_err());
    }

    proptest! {
        #[test]
        fn bootstrap_brackets_mean(v in prop::collection::vec(-10.0f64..10.0, 1..20), seed in any::<u64>()) {
            let (lo, hi) = bootstrap_ci(&v, 0.95, 500, seed).unwrap();
            let m = mean(&v);
            prop_assert!(lo <= m + 1e-12 && m <= hi + 1e-12, "{lo} {m} {hi}");
        }

        #[test]
        fn wilcoxon_sign_flip_symmetry(d in prop::collection::vec(-5i32..5, 1..30)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
            let a = wilcoxon_signed_rank(&PairedSeries::from_differences(&d), Alternative::TwoSided);
            let b = wilcoxon_signed_rank(&PairedSeries::from_differences(&neg), Alternative::TwoSided);
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn bonferroni_monotone(p in 0.0f64..1.0, q in 0.0f64..1.0, m in 1usize..10) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(bonferroni(lo, m) <= bonferroni(hi, m));
            prop_assert!(bonferroni(p, m) <= bonferroni(p, m + 1));
            prop_assert!(bonferroni(p, m) <= 1.0);
        }

        #[test]
        fn geometry_invariant_under_rigid_motion(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 15),
            theta in 0.0f64..6.3, tx in -3.0f64..3.0, ty in -3.0f64..3.0,
        ) {
            let e = EmbeddingSet::from_vectors(2, pts.iter().enumerate()
                .map(|(i, (x, y))| (format!("p{i:02}"), vec![*x, *y]))).unwrap();
            let (c, sn) = (theta.cos(), theta.sin());
            let moved = e.map_vectors(|v| vec![c * v[0] - sn * v[1] + tx, sn * v[0] + c * v[1] + ty]).unwrap();
            let pool: Vec<String> = (0..pts.len()).map(|i| format!("p{i:02}")).collect();
            let batch = &pool[..5];
            let d0 = batch_diversity(batch, &e).unwrap();
            let d1 = batch_diversity(batch, &moved).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-9);
            let o0 = batch_outlier_score(batch, &pool, &e, 3).unwrap();
            let o1 = batch_outlier_score(batch, &pool, &moved, 3).unwrap();
            prop_assert!((o0 - o1).abs() < 1e-9);
        }
    }

    #[test]
    fn random_batches_have_near_zero_relative_performance() {
        let mut rng = seeding::rng(5);
        let pool: BTreeMap<String, f64> = (0..5000).map(|i| (format!("e{i:05}"), rng.random::<f64>())).collect();
        let ids: Vec<&String> = pool.keys().collect();
        let mut total = 0.0;
        for seed in 0..20u64 {
            let mut r = seeding::rng(seed);
            let picked = rand::seq::index::sample(&mut r, ids.len(), 500);
            let batch: BTreeMap<String, f64> = picked.into_iter().map(|i| (ids[i].clone(), pool[ids[i]])).collect();
            total += relative_selection_performance(&batch, &pool).unwrap();
        }
        assert!((total / 20.0).abs() < 0.05);
    }
}
