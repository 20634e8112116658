use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::RunConfig;
use super::run::{
    Experiment, ProfileRecord, RunRecord, SeedFailure, SeedOutcome, SelectionRecord,
};

pub const RECORDS_FILE: &str = "records.csv";
pub const RECORDS_HEADER: [&str; 9] = [
    "dataset",
    "strategy",
    "seed",
    "iteration",
    "labeled_count",
    "metric_name",
    "metric_value",
    "selected_ids",
    "wall_time_s",
];
pub const PROFILES_FILE: &str = "batch_profiles.csv";
const PROFILES_HEADER: [&str; 6] = [
    "dataset",
    "strategy",
    "seed",
    "batch_size",
    "outlier_score",
    "diversity",
];
pub const SELECTION_FILE: &str = "selection_performance.csv";
const SELECTION_HEADER: [&str; 5] = [
    "dataset",
    "strategy",
    "seed",
    "iteration",
    "relative_performance",
];
pub const TIMINGS_FILE: &str = "timings.csv";
const TIMINGS_HEADER: [&str; 5] = ["dataset", "strategy", "seed", "iteration", "wall_time_s"];
pub const FAILURES_FILE: &str = "failures.csv";
const FAILURES_HEADER: [&str; 5] = ["dataset", "strategy", "seed", "iteration", "error"];

/// Rows of every per-seed table start with `dataset,strategy,seed`.
type Key = (String, String, u64);

/// An output directory holding records and their sidecar tables. All
/// writes for one directory go through a single `Store`.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>, create: bool) -> Result<Self> {
        let dir = dir.into();
        if !dir.is_dir() {
            if !create {
                return Err(Error::format(&dir, "output directory does not exist"));
            }
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Store { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn snapshot_path(&self, cfg: &RunConfig) -> PathBuf {
        self.path(&format!("config_{}_{}.toml", cfg.dataset, cfg.strategy))
    }

    pub fn write_config_snapshot(&self, cfg: &RunConfig) -> Result<()> {
        let path = self.snapshot_path(cfg);
        fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
    }

    /// Seeds of `cfg` whose records cover every iteration and that did not
    /// fail.
    pub fn completed_seeds(&self, cfg: &RunConfig) -> Result<BTreeSet<u64>> {
        let failed: BTreeSet<Key> = read_table(&self.path(FAILURES_FILE), &FAILURES_HEADER)?
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        let mut seen: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
        for r in self.records()? {
            if r.dataset == cfg.dataset && r.strategy == cfg.strategy.name() {
                seen.entry(r.seed).or_default().insert(r.iteration);
            }
        }
        let n = cfg.schedule.iterations();
        Ok(seen
            .into_iter()
            .filter(|(seed, its)| {
                its.len() == n + 1
                    && its.iter().all(|&i| i <= n)
                    && !failed.contains(&(cfg.dataset.clone(), cfg.strategy.name().into(), *seed))
            })
            .map(|(seed, _)| seed)
            .collect())
    }

    /// Seeds of `cfg` with any rows at all.
    pub fn seeds_with_rows(&self, cfg: &RunConfig) -> Result<BTreeSet<u64>> {
        Ok(self
            .records()?
            .into_iter()
            .filter(|r| r.dataset == cfg.dataset && r.strategy == cfg.strategy.name())
            .map(|r| r.seed)
            .collect())
    }

    /// Replaces every row of `outcome`'s seed in all tables.
    pub fn persist(&self, cfg: &RunConfig, outcome: &SeedOutcome) -> Result<()> {
        let key: Key = (cfg.dataset.clone(), cfg.strategy.name().into(), outcome.seed);
        let records = outcome
            .records
            .iter()
            .map(|r| {
                let wall = if cfg.record_wall_time { r.wall_time_s } else { 0.0 };
                vec![
                    r.iteration.to_string(),
                    r.labeled_count.to_string(),
                    r.metric_name.clone(),
                    r.metric_value.to_string(),
                    r.selected_ids.join(";"),
                    wall.to_string(),
                ]
            })
            .collect();
        self.replace(RECORDS_FILE, &RECORDS_HEADER, &key, records)?;
        let timings = outcome
            .records
            .iter()
            .map(|r| vec![r.iteration.to_string(), r.wall_time_s.to_string()])
            .collect();
        self.replace(TIMINGS_FILE, &TIMINGS_HEADER, &key, timings)?;
        let profiles = outcome
            .profile
            .iter()
            .map(|p| {
                vec![
                    p.batch_size.to_string(),
                    p.outlier_score.to_string(),
                    p.diversity.to_string(),
                ]
            })
            .collect();
        self.replace(PROFILES_FILE, &PROFILES_HEADER, &key, profiles)?;
        let selection = outcome
            .selection
            .iter()
            .map(|s| vec![s.iteration.to_string(), s.relative_performance.to_string()])
            .collect();
        self.replace(SELECTION_FILE, &SELECTION_HEADER, &key, selection)?;
        let failures = outcome
            .failure
            .iter()
            .map(|f| vec![f.iteration.to_string(), f.message.clone()])
            .collect();
        self.replace(FAILURES_FILE, &FAILURES_HEADER, &key, failures)
    }

    /// Rewrites `file` without the rows of `key`, then appends `rows` for it.
    fn replace(
        &self,
        file: &str,
        header: &[&str],
        key: &Key,
        rows: Vec<Vec<String>>,
    ) -> Result<()> {
        let path = self.path(file);
        let mut kept: Vec<(Key, Vec<String>)> = read_table(&path, header)?
            .into_iter()
            .filter(|(k, _)| k != key)
            .collect();
        if kept.is_empty() && rows.is_empty() && !path.exists() {
            return Ok(());
        }
        kept.extend(rows.into_iter().map(|r| (key.clone(), r)));
        let tmp = path.with_extension("csv.tmp");
        {
            let mut w = csv::Writer::from_path(&tmp).map_err(|e| csv_error(&tmp, e))?;
            w.write_record(header).map_err(|e| csv_error(&tmp, e))?;
            for ((dataset, strategy, seed), rest) in &kept {
                let seed = seed.to_string();
                let row = [dataset.as_str(), strategy.as_str(), seed.as_str()]
                    .into_iter()
                    .chain(rest.iter().map(String::as_str));
                w.write_record(row).map_err(|e| csv_error(&tmp, e))?;
            }
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Stored records; none yet in a fresh directory.
    pub fn records(&self) -> Result<Vec<RunRecord>> {
        if !self.path(RECORDS_FILE).exists() {
            return Ok(Vec::new());
        }
        read_records(&self.dir)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(Key, Vec<String>)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let found = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::format(
            path,
            format!("expected header `{}`", header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let seed = rec[2]
            .parse()
            .map_err(|_| Error::format(path, format!("line {line}: bad seed `{}`", &rec[2])))?;
        rows.push((
            (rec[0].to_string(), rec[1].to_string(), seed),
            rec.iter().skip(3).map(str::to_string).collect(),
        ));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, name: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::format(path, format!("row {row}: bad {name} `{v}`")))
}

/// Reads the records file of a run directory, which must exist.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(RECORDS_FILE);
    if !path.is_file() {
        return Err(Error::format(&path, "no records file"));
    }
    let mut out = Vec::new();
    for (row, ((dataset, strategy, seed), rest)) in
        read_table(&path, &RECORDS_HEADER)?.into_iter().enumerate()
    {
        let row = row + 1;
        out.push(RunRecord {
            dataset,
            strategy,
            seed,
            iteration: parse_field(&path, row, "iteration", &rest[0])?,
            labeled_count: parse_field(&path, row, "labeled_count", &rest[1])?,
            metric_name: rest[2].clone(),
            metric_value: parse_field(&path, row, "metric_value", &rest[3])?,
            selected_ids: if rest[4].is_empty() {
                Vec::new()
            } else {
                rest[4].split(';').map(str::to_string).collect()
            },
            strategy_scores: None,
            wall_time_s: parse_field(&path, row, "wall_time_s", &rest[5])?,
        });
    }
    Ok(out)
}

/// Batch profiles keyed by (dataset, strategy).
pub fn read_profiles(dir: &Path) -> Result<Vec<(String, String, ProfileRecord)>> {
    let path = dir.join(PROFILES_FILE);
    read_table(&path, &PROFILES_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(row, ((d, s, seed), rest))| {
            Ok((
                d,
                s,
                ProfileRecord {
                    seed,
                    batch_size: parse_field(&path, row + 1, "batch_size", &rest[0])?,
                    outlier_score: parse_field(&path, row + 1, "outlier_score", &rest[1])?,
                    diversity: parse_field(&path, row + 1, "diversity", &rest[2])?,
                },
            ))
        })
        .collect()
}

pub fn read_selection(dir: &Path) -> Result<Vec<(String, String, SelectionRecord)>> {
    let path = dir.join(SELECTION_FILE);
    read_table(&path, &SELECTION_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(row, ((d, s, seed), rest))| {
            Ok((
                d,
                s,
                SelectionRecord {
                    seed,
                    iteration: parse_field(&path, row + 1, "iteration", &rest[0])?,
                    relative_performance: parse_field(
                        &path,
                        row + 1,
                        "relative_performance",
                        &rest[1],
                    )?,
                },
            ))
        })
        .collect()
}

pub fn read_failures(dir: &Path) -> Result<Vec<(String, String, u64, SeedFailure)>> {
    let path = dir.join(FAILURES_FILE);
    read_table(&path, &FAILURES_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(row, ((d, s, seed), rest))| {
            Ok((
                d,
                s,
                seed,
                SeedFailure {
                    iteration: parse_field(&path, row + 1, "iteration", &rest[0])?,
                    message: rest[1].clone(),
                },
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub ran: Vec<u64>,
    pub skipped: Vec<u64>,
    pub failed: Vec<u64>,
}

/// Runs the seeds of `cfg` that still need running and persists each one.
/// Without `resume`, any existing rows for the configured seeds are an
/// error; with it, complete seeds are skipped and partial ones rerun.
pub fn run_and_persist(
    cfg: &RunConfig,
    exp: &Experiment<'_>,
    store: &Store,
    resume: bool,
) -> Result<RunSummary> {
    let done = store.completed_seeds(cfg)?;
    let mut summary = RunSummary::default();
    let todo: Vec<u64> = if resume {
        let (skip, todo): (Vec<u64>, Vec<u64>) =
            cfg.seeds.iter().partition(|s| done.contains(s));
        summary.skipped = skip;
        todo
    } else {
        let existing = store.seeds_with_rows(cfg)?;
        if let Some(s) = cfg.seeds.iter().find(|s| existing.contains(s)) {
            return Err(Error::invalid(format!(
                "{} already holds records for dataset `{}`, strategy `{}`, seed {s}; pass resume to continue",
                store.dir().display(),
                cfg.dataset,
                cfg.strategy
            )));
        }
        cfg.seeds.clone()
    };
    store.write_config_snapshot(cfg)?;
    for outcome in exp.run_seeds(&todo)? {
        store.persist(cfg, &outcome)?;
        if outcome.is_complete() {
            summary.ran.push(outcome.seed);
        } else {
            summary.failed.push(outcome.seed);
        }
    }
    Ok(summary)
}
