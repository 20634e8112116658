//! Command-line front end: run simulations, then turn stored records into
//! analysis, significance, and learning-curve tables.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use alnlg::analysis::Alternative;
use alnlg::backend::server::serve;
use alnlg::backend::{conformance, RemoteBackend, ToyBackend, ToyConfig};
use alnlg::corpus::{load_dataset, write_dataset};
use alnlg::harness::report::{analyze_dir, report_dir, stats_dir, StatsOptions};
use alnlg::harness::{build_backend, run_and_persist, Experiment, RunConfig, Store};
use alnlg::synth::{text_dataset, TextTaskConfig};

#[derive(Parser)]
#[command(name = "alnlg", version, about = "Pool-based active learning simulation for text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sided {
    TwoSided,
    Greater,
    Less,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a configuration and append its records to <out>.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip seeds already complete in <out> and rerun partial ones.
        #[arg(long)]
        resume: bool,
    },
    /// Batch-profile and selection-performance tables.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wilcoxon/Bonferroni significance and relative-gain tables.
    Stats {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "random")]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "two-sided")]
        alternative: Sided,
        /// Bonferroni family size; defaults to the strategies per dataset.
        #[arg(long)]
        family_size: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Learning curves with bootstrap intervals, as CSV and SVG.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the toy backend over the JSON protocol until interrupted.
    ServeToy {
        #[arg(long, default_value = "127.0.0.1:8700")]
        addr: String,
    },
    /// Check a backend server against the protocol contract.
    Conformance {
        #[arg(long)]
        url: String,
    },
    /// Write a synthetic train/test pair usable with the toy backend.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, resume } => {
            let cfg = RunConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let train = load_dataset(&cfg.train_path, "train")?;
            let test = load_dataset(&cfg.test_path, "test")?;
            let backend = build_backend(&cfg.backend)?;
            let exp = Experiment::new(&cfg, &train, &test, backend.as_ref())?;
            let store = Store::open(&out, true)?;
            let summary = run_and_persist(&cfg, &exp, &store, resume)?;
            println!(
                "{} / {}: ran {:?}, skipped {:?}, failed {:?}",
                cfg.dataset, cfg.strategy, summary.ran, summary.skipped, summary.failed
            );
            if !summary.failed.is_empty() {
                bail!("seeds {:?} failed; see failures.csv", summary.failed);
            }
        }
        Command::Analyze { records, out } => {
            let (profiles, selection) = analyze_dir(&records, &out)?;
            println!(
                "{} batch profiles, {} selection-performance cells",
                profiles.len(),
                selection.len()
            );
        }
        Command::Stats {
            records,
            baseline,
            out,
            alternative,
            family_size,
            alpha,
        } => {
            let opts = StatsOptions {
                alternative: match alternative {
                    Sided::TwoSided => Alternative::TwoSided,
                    Sided::Greater => Alternative::Greater,
                    Sided::Less => Alternative::Less,
                },
                family_size,
                alpha,
            };
            let (sig, gains) = stats_dir(&records, &baseline, &out, &opts)?;
            for r in &sig {
                println!(
                    "{} {}: p={:.4} p_bonf={:.4}{}",
                    r.dataset,
                    r.strategy,
                    r.p_raw,
                    r.p_bonferroni,
                    if r.significant { " *" } else { "" }
                );
            }
            println!("{} relative-gain points", gains.len());
        }
        Command::Report { records, out } => {
            let curves = report_dir(&records, &out)?;
            println!("{} curve points written to {}", curves.len(), out.display());
        }
        Command::ServeToy { addr } => {
            let handle = serve(Arc::new(ToyBackend::new(ToyConfig::default())?), &addr)?;
            println!("serving toy backend at {}", handle.url());
            handle.join();
        }
        Command::Conformance { url } => {
            let report = conformance::check(&RemoteBackend::new(url));
            for c in &report.checks {
                let status = if c.passed { "ok  " } else { "FAIL" };
                println!("{status} {} {}", c.name, c.detail);
            }
            if !report.passed() {
                bail!("backend does not conform");
            }
        }
        Command::Synth { out, train, test, seed } => {
            let cfg = TextTaskConfig {
                seed,
                ..TextTaskConfig::default()
            };
            let (tr, te) = text_dataset(&cfg, train, test)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_dataset(&tr, out.join("train.jsonl"))?;
            write_dataset(&te, out.join("test.jsonl"))?;
            println!("wrote {} train and {} test examples to {}", tr.len(), te.len(), out.display());
        }
    }
    Ok(())
}
