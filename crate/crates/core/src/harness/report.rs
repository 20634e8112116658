use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::analysis::{
    bonferroni, bootstrap_ci, relative_gains, wilcoxon_signed_rank, Alternative, CurvePoint,
    PairedSeries, WilcoxonResult,
};
use crate::error::{Error, Result};
use crate::{par, seeding};

use super::run::RunRecord;
use super::store::{read_profiles, read_records, read_selection};

/// Records of one dataset-strategy cell, by (iteration, seed).
type Cell = BTreeMap<(usize, u64), f64>;

fn cells(records: &[RunRecord]) -> BTreeMap<(String, String), Cell> {
    let mut out: BTreeMap<(String, String), Cell> = BTreeMap::new();
    for r in records {
        out.entry((r.dataset.clone(), r.strategy.clone()))
            .or_default()
            .insert((r.iteration, r.seed), r.metric_value);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsOptions {
    pub alternative: Alternative,
    /// Bonferroni family size; by default the number of strategies compared
    /// against the baseline on each dataset.
    pub family_size: Option<usize>,
    pub alpha: f64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        StatsOptions {
            alternative: Alternative::TwoSided,
            family_size: None,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub dataset: String,
    pub strategy: String,
    pub p_raw: f64,
    pub p_bonferroni: f64,
    /// Corrected p below alpha with the strategy ahead of the baseline.
    pub significant: bool,
    pub pairs: usize,
    pub test: WilcoxonResult,
}

/// Strategy and baseline values aligned over every post-zero-shot
/// (iteration, seed) point of the cell.
fn paired(cell: &Cell, base: &Cell, what: &str) -> Result<PairedSeries> {
    let keys: Vec<&(usize, u64)> = cell.keys().filter(|(i, _)| *i > 0).collect();
    let base_keys: Vec<&(usize, u64)> = base.keys().filter(|(i, _)| *i > 0).collect();
    if keys != base_keys {
        return Err(Error::invalid(format!(
            "{what}: iterations and seeds do not line up with the baseline"
        )));
    }
    PairedSeries::new(
        keys.iter().map(|k| cell[*k]).collect(),
        keys.iter().map(|k| base[*k]).collect(),
    )
}

fn strategies_vs_baseline<'a>(
    all: &'a BTreeMap<(String, String), Cell>,
    baseline: &str,
) -> Result<Vec<(&'a str, &'a str, &'a Cell, &'a Cell)>> {
    let mut out = Vec::new();
    for ((dataset, strategy), cell) in all {
        if strategy == baseline {
            continue;
        }
        let base = all
            .get(&(dataset.clone(), baseline.to_string()))
            .ok_or_else(|| {
                Error::invalid(format!("no `{baseline}` records for dataset `{dataset}`"))
            })?;
        out.push((dataset.as_str(), strategy.as_str(), cell, base));
    }
    Ok(out)
}

/// Paired Wilcoxon test of every strategy against the baseline on each
/// dataset, with Bonferroni correction.
pub fn significance(
    records: &[RunRecord],
    baseline: &str,
    opts: &StatsOptions,
) -> Result<Vec<SignificanceRow>> {
    let all = cells(records);
    let jobs = strategies_vs_baseline(&all, baseline)?;
    let mut per_dataset: BTreeMap<&str, usize> = BTreeMap::new();
    for (d, ..) in &jobs {
        *per_dataset.entry(d).or_default() += 1;
    }
    par::map(&jobs, |&(dataset, strategy, cell, base)| {
        let pairs = paired(cell, base, &format!("{dataset}/{strategy}"))?;
        let test = wilcoxon_signed_rank(&pairs, opts.alternative);
        let m = opts.family_size.unwrap_or(per_dataset[dataset]);
        let p_bonferroni = bonferroni(test.p_value, m);
        Ok(SignificanceRow {
            dataset: dataset.to_string(),
            strategy: strategy.to_string(),
            p_raw: test.p_value,
            p_bonferroni,
            significant: p_bonferroni < opts.alpha && test.w_plus > test.w_minus,
            pairs: pairs.len(),
            test,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub dataset: String,
    pub strategy: String,
    pub iteration: usize,
    /// 1-based position of the seed among the cell's seeds.
    pub repetition: usize,
    pub relative_gain_pct: Option<f64>,
}

/// Relative gain of every strategy over the baseline at each post-zero-shot
/// point. Zero-shot values come from the baseline's iteration-0 records.
pub fn gains(records: &[RunRecord], baseline: &str) -> Result<Vec<GainRow>> {
    let all = cells(records);
    let jobs = strategies_vs_baseline(&all, baseline)?;
    let per_cell = par::map(&jobs, |&(dataset, strategy, cell, base)| -> Result<Vec<GainRow>> {
        paired(cell, base, &format!("{dataset}/{strategy}"))?;
        let seeds: Vec<u64> = {
            let mut s: Vec<u64> = base.keys().map(|(_, s)| *s).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let rep = |seed: u64| seeds.binary_search(&seed).unwrap() + 1;
        let points = |c: &Cell| -> Vec<CurvePoint> {
            c.iter()
                .filter(|((i, _), _)| *i > 0)
                .map(|(&(iteration, seed), &value)| CurvePoint {
                    iteration,
                    repetition: rep(seed),
                    value,
                })
                .collect()
        };
        let mut zero_shot = BTreeMap::new();
        for &seed in &seeds {
            let z = base.get(&(0, seed)).ok_or_else(|| {
                Error::invalid(format!("{dataset}: no zero-shot record for seed {seed}"))
            })?;
            zero_shot.insert(rep(seed), *z);
        }
        Ok(relative_gains(&points(cell), &points(base), &zero_shot)?
            .into_iter()
            .map(|g| GainRow {
                dataset: dataset.to_string(),
                strategy: strategy.to_string(),
                iteration: g.iteration,
                repetition: g.repetition,
                relative_gain_pct: g.percent,
            })
            .collect())
    });
    let mut out = Vec::new();
    for rows in per_cell {
        out.extend(rows?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub dataset: String,
    pub strategy: String,
    pub iteration: usize,
    pub labeled_count: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub repetitions: usize,
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;

/// Mean learning curve per dataset and strategy with bootstrap intervals
/// over repetitions.
pub fn learning_curves(records: &[RunRecord]) -> Result<Vec<CurveRow>> {
    let mut groups: BTreeMap<(String, String, usize), (usize, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups
            .entry((r.dataset.clone(), r.strategy.clone(), r.iteration))
            .or_insert((r.labeled_count, Vec::new()));
        if g.0 != r.labeled_count {
            return Err(Error::invalid(format!(
                "{}/{}: iteration {} has differing labeled counts",
                r.dataset, r.strategy, r.iteration
            )));
        }
        g.1.push(r.metric_value);
    }
    let jobs: Vec<_> = groups.into_iter().collect();
    par::map(&jobs, |((dataset, strategy, iteration), (labeled, values))| {
        let stream = format!("bootstrap/{dataset}/{strategy}/{iteration}");
        let (ci_low, ci_high) = bootstrap_ci(
            values,
            BOOTSTRAP_LEVEL,
            BOOTSTRAP_RESAMPLES,
            seeding::derive(0, &stream),
        )?;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(CurveRow {
            dataset: dataset.clone(),
            strategy: strategy.clone(),
            iteration: *iteration,
            labeled_count: *labeled,
            mean: (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi),
            ci_low,
            ci_high,
            repetitions: values.len(),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub strategy: String,
    pub outlier_score: f64,
    pub diversity: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub dataset: String,
    pub strategy: String,
    pub mean_relative_performance: f64,
    pub observations: usize,
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Batch-profile and selection-performance tables of a run directory.
pub fn analyze_dir(records: &Path, out: &Path) -> Result<(Vec<ProfileRow>, Vec<SelectionRow>)> {
    // Only to confirm this is a run directory.
    read_records(records)?;
    ensure_dir(out)?;
    let mut by_strategy: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (_, strategy, p) in read_profiles(records)? {
        by_strategy
            .entry(strategy)
            .or_default()
            .push((p.outlier_score, p.diversity));
    }
    let profiles: Vec<ProfileRow> = by_strategy
        .into_iter()
        .map(|(strategy, v)| ProfileRow {
            outlier_score: v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64,
            diversity: v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64,
            batches: v.len(),
            strategy,
        })
        .collect();
    write_csv(
        &out.join("batch_profile.csv"),
        &["strategy", "outlier_score", "diversity"],
        &profiles
            .iter()
            .map(|p| vec![p.strategy.clone(), p.outlier_score.to_string(), p.diversity.to_string()])
            .collect::<Vec<_>>(),
    )?;

    let mut by_cell: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (d, s, r) in read_selection(records)? {
        by_cell.entry((d, s)).or_default().push(r.relative_performance);
    }
    let selection: Vec<SelectionRow> = by_cell
        .into_iter()
        .map(|((dataset, strategy), v)| SelectionRow {
            dataset,
            strategy,
            mean_relative_performance: v.iter().sum::<f64>() / v.len() as f64,
            observations: v.len(),
        })
        .collect();
    write_csv(
        &out.join("selection_performance.csv"),
        &["dataset", "strategy", "mean_relative_performance", "observations"],
        &selection
            .iter()
            .map(|s| {
                vec![
                    s.dataset.clone(),
                    s.strategy.clone(),
                    s.mean_relative_performance.to_string(),
                    s.observations.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    Ok((profiles, selection))
}

/// Significance and relative-gain tables of a run directory.
pub fn stats_dir(
    records: &Path,
    baseline: &str,
    out: &Path,
    opts: &StatsOptions,
) -> Result<(Vec<SignificanceRow>, Vec<GainRow>)> {
    let recs = read_records(records)?;
    if recs.is_empty() {
        return Err(Error::Empty("records"));
    }
    ensure_dir(out)?;
    let sig = significance(&recs, baseline, opts)?;
    write_csv(
        &out.join("significance.csv"),
        &["dataset", "strategy", "p_raw", "p_bonferroni", "significant"],
        &sig.iter()
            .map(|r| {
                vec![
                    r.dataset.clone(),
                    r.strategy.clone(),
                    r.p_raw.to_string(),
                    r.p_bonferroni.to_string(),
                    r.significant.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        &out.join("significance_detail.csv"),
        &["dataset", "strategy", "pairs", "zeros_discarded", "degenerate", "w_plus", "w_minus"],
        &sig.iter()
            .map(|r| {
                vec![
                    r.dataset.clone(),
                    r.strategy.clone(),
                    r.pairs.to_string(),
                    r.test.zeros_discarded.to_string(),
                    r.test.degenerate.to_string(),
                    r.test.w_plus.to_string(),
                    r.test.w_minus.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let gains = gains(&recs, baseline)?;
    write_csv(
        &out.join("gains.csv"),
        &["dataset", "strategy", "iteration", "repetition", "relative_gain_pct"],
        &gains
            .iter()
            .map(|g| {
                vec![
                    g.dataset.clone(),
                    g.strategy.clone(),
                    g.iteration.to_string(),
                    g.repetition.to_string(),
                    g.relative_gain_pct.map_or("NA".to_string(), |p| p.to_string()),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    Ok((sig, gains))
}

/// Learning-curve table plus one SVG chart per dataset.
pub fn report_dir(records: &Path, out: &Path) -> Result<Vec<CurveRow>> {
    let recs = read_records(records)?;
    if recs.is_empty() {
        return Err(Error::Empty("records"));
    }
    ensure_dir(out)?;
    let curves = learning_curves(&recs)?;
    write_csv(
        &out.join("learning_curves.csv"),
        &[
            "dataset",
            "strategy",
            "iteration",
            "labeled_count",
            "mean",
            "ci_low",
            "ci_high",
            "repetitions",
        ],
        &curves
            .iter()
            .map(|c| {
                vec![
                    c.dataset.clone(),
                    c.strategy.clone(),
                    c.iteration.to_string(),
                    c.labeled_count.to_string(),
                    c.mean.to_string(),
                    c.ci_low.to_string(),
                    c.ci_high.to_string(),
                    c.repetitions.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let mut by_dataset: BTreeMap<&str, Vec<&CurveRow>> = BTreeMap::new();
    for c in &curves {
        by_dataset.entry(&c.dataset).or_default().push(c);
    }
    for (dataset, rows) in by_dataset {
        let path = out.join(format!("learning_curve_{dataset}.svg"));
        fs::write(&path, curve_svg(dataset, &rows)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(curves)
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Line chart of mean metric against labeled count, one line and shaded
/// interval per strategy.
pub fn curve_svg(title: &str, rows: &[&CurveRow]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let x_max = rows.iter().map(|r| r.labeled_count).max().unwrap_or(1).max(1) as f64;
    let mut y_lo = rows.iter().map(|r| r.ci_low).fold(f64::INFINITY, f64::min);
    let mut y_hi = rows.iter().map(|r| r.ci_high).fold(f64::NEG_INFINITY, f64::max);
    if !(y_hi > y_lo) {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let sx = |x: usize| m + (w - 2.0 * m) * x as f64 / x_max;
    let sy = |y: f64| h - m - (h - 2.0 * m) * (y - y_lo) / (y_hi - y_lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{m},{m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">labeled examples</text>"#,
        w / 2.0,
        h - 12.0
    );
    for (v, anchor) in [(y_lo, "end"), (y_hi, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="{anchor}">{v:.3}</text>"#,
            m - 4.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{m}" y="{}" text-anchor="middle">0</text>"#, h - m + 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_max}</text>"#,
        w - m,
        h - m + 16.0
    );

    let mut by_strategy: BTreeMap<&str, Vec<&CurveRow>> = BTreeMap::new();
    for r in rows {
        by_strategy.entry(&r.strategy).or_default().push(r);
    }
    for (k, (strategy, mut pts)) in by_strategy.into_iter().enumerate() {
        pts.sort_by_key(|r| r.labeled_count);
        let colour = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", sx(r.labeled_count), sy(r.ci_high)))
            .collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|r| format!("{:.1},{:.1}", sx(r.labeled_count), sy(r.ci_low)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polygon points="{} {}" fill="{colour}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.1},{:.1}", sx(r.labeled_count), sy(r.mean)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = m + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{colour}">{}</text>"#,
            w - m - 90.0,
            escape(strategy)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(dataset: &str, strategy: &str, seed: u64, iteration: usize, value: f64) -> RunRecord {
        RunRecord {
            dataset: dataset.into(),
            strategy: strategy.into(),
            seed,
            iteration,
            labeled_count: iteration * 10,
            metric_name: "bleu".into(),
            metric_value: value,
            selected_ids: Vec::new(),
            strategy_scores: None,
            wall_time_s: 0.0,
        }
    }

    fn grid(strategy: &str, offset: f64) -> Vec<RunRecord> {
        let mut out = Vec::new();
        for seed in 0..3 {
            for it in 0..=4 {
                let v = if it == 0 { 0.1 } else { 0.1 + 0.1 * it as f64 + offset };
                out.push(rec("d", strategy, seed, it, v));
            }
        }
        out
    }

    #[test]
    fn gains_against_baseline() {
        let mut recs = grid("random", 0.0);
        recs.extend(grid("mte", 0.05));
        let g = gains(&recs, "random").unwrap();
        assert_eq!(g.len(), 12);
        // Iteration 1: strategy gain 0.15 vs random 0.1.
        let first = g.iter().find(|r| r.iteration == 1 && r.repetition == 1).unwrap();
        assert!((first.relative_gain_pct.unwrap() - 50.0).abs() < 1e-9);
        assert!(g.iter().all(|r| (1..=3).contains(&r.repetition)));
    }

    #[test]
    fn significance_direction_and_family() {
        let mut recs = grid("random", 0.0);
        recs.extend(grid("mte", 0.05));
        recs.extend(grid("idds", -0.05));
        let rows = significance(&recs, "random", &StatsOptions::default()).unwrap();
        let by: BTreeMap<&str, &SignificanceRow> =
            rows.iter().map(|r| (r.strategy.as_str(), r)).collect();
        assert_eq!(by["mte"].pairs, 12);
        assert_eq!(by["mte"].p_raw, by["idds"].p_raw);
        assert_eq!(by["mte"].p_bonferroni, (by["mte"].p_raw * 2.0).min(1.0));
        assert!(by["mte"].significant);
        assert!(!by["idds"].significant);
    }

    #[test]
    fn misaligned_cells_are_rejected() {
        let mut recs = grid("random", 0.0);
        recs.extend(grid("mte", 0.05).into_iter().filter(|r| r.seed != 2));
        assert!(significance(&recs, "random", &StatsOptions::default()).is_err());
    }

    #[test]
    fn curves_and_chart() {
        let recs = grid("random", 0.0);
        let curves = learning_curves(&recs).unwrap();
        assert_eq!(curves.len(), 5);
        for c in &curves {
            // Every seed has the same value, so the interval collapses.
            assert_eq!((c.ci_low, c.ci_high), (c.mean, c.mean));
            assert_eq!(c.repetitions, 3);
        }
        let rows: Vec<&CurveRow> = curves.iter().collect();
        let svg = curve_svg("a<b", &rows);
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
