use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{Capabilities, Capability, FinetuneSpec, ToyConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricConfig, MetricKind};
use crate::strategies::{StrategyName, StrategyParams};

/// Batch sizes `n_1..n_N` of the active learning iterations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub batch_sizes: Vec<usize>,
}

impl Default for Schedule {
    fn default() -> Self {
        default_schedule()
    }
}

/// Ten batches of 20 followed by eight batches of 100.
pub fn default_schedule() -> Schedule {
    let mut batch_sizes = vec![20; 10];
    batch_sizes.extend([100; 8]);
    Schedule { batch_sizes }
}

impl Schedule {
    pub fn iterations(&self) -> usize {
        self.batch_sizes.len()
    }

    /// Labeled-pool size after each iteration, starting with 0.
    pub fn cumulative(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.batch_sizes.iter().scan(0, |acc, n| {
                *acc += n;
                Some(*acc)
            }))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(Error::invalid("schedule needs at least one positive batch size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Toy(ToyConfig),
    Remote { url: String },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Toy(ToyConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    MeanSentence,
    Corpus,
}

fn default_dataset() -> String {
    "dataset".into()
}
fn default_pool_cap() -> usize {
    10_000
}
fn default_repetitions() -> usize {
    5
}
fn default_test_size() -> usize {
    500
}
fn default_analysis_batch() -> usize {
    100
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub metric: MetricKind,
    #[serde(default)]
    pub metric_config: MetricConfig,
    pub strategy: StrategyName,
    #[serde(default)]
    pub strategy_params: StrategyParams,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_pool_cap")]
    pub pool_cap: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// One seed per repetition; defaults to `0..repetitions`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub finetune: FinetuneSpec,
    #[serde(default)]
    pub eval_mode: EvalMode,
    /// Test examples evaluated per iteration; 0 keeps the whole split.
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Applied to every input sent to the backend; `{input}` is replaced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
    /// Profile a first-iteration batch of `analysis_batch_size` examples.
    #[serde(default = "yes")]
    pub profile_batches: bool,
    #[serde(default = "default_analysis_batch")]
    pub analysis_batch_size: usize,
    /// Score the unlabeled pool each iteration to relate batches to model
    /// performance. Costs one extra generation pass over the pool.
    #[serde(default)]
    pub track_selection_performance: bool,
    /// Write measured wall time into the records file instead of 0.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl RunConfig {
    /// Minimal configuration with defaults for everything optional.
    pub fn new(
        train_path: impl Into<PathBuf>,
        test_path: impl Into<PathBuf>,
        metric: MetricKind,
        strategy: StrategyName,
    ) -> Self {
        RunConfig {
            dataset: default_dataset(),
            train_path: train_path.into(),
            test_path: test_path.into(),
            metric,
            metric_config: MetricConfig::default(),
            strategy,
            strategy_params: StrategyParams::default(),
            schedule: default_schedule(),
            pool_cap: default_pool_cap(),
            repetitions: default_repetitions(),
            seeds: (0..default_repetitions() as u64).collect(),
            backend: BackendConfig::default(),
            finetune: FinetuneSpec::default(),
            eval_mode: EvalMode::default(),
            test_size: default_test_size(),
            prompt_template: None,
            profile_batches: true,
            analysis_batch_size: default_analysis_batch(),
            track_selection_performance: false,
            record_wall_time: false,
        }
    }

    /// Parses TOML; relative dataset paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        if cfg.seeds.is_empty() {
            cfg.seeds = (0..cfg.repetitions as u64).collect();
        }
        if let Some(dir) = base_dir {
            for p in [&mut cfg.train_path, &mut cfg.test_path] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.metric_config.validate()?;
        self.strategy_params.validate()?;
        self.schedule.validate()?;
        if self.pool_cap == 0 {
            return Err(Error::invalid("pool_cap must be at least 1"));
        }
        if self.repetitions == 0 || self.seeds.len() != self.repetitions {
            return Err(Error::invalid(format!(
                "{} seeds given for {} repetitions",
                self.seeds.len(),
                self.repetitions
            )));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if self.dataset.contains(',') || self.dataset.is_empty() {
            return Err(Error::invalid("dataset name must be non-empty and comma-free"));
        }
        if self.profile_batches && self.analysis_batch_size == 0 {
            return Err(Error::invalid("analysis_batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Everything the configured run will ask of the backend.
    pub fn required_capabilities(&self) -> Capabilities {
        let mut caps: Vec<Capability> = vec![Capability::Finetune, Capability::Generate];
        caps.extend(self.strategy.capabilities().iter());
        if self.profile_batches {
            caps.push(Capability::Embed);
        }
        if self.metric == MetricKind::GScore {
            caps.extend([Capability::ScoreFormality, Capability::ScoreSimilarity]);
        }
        caps.into_iter().collect()
    }

    pub fn apply_template(&self, input: &str) -> String {
        match &self.prompt_template {
            Some(t) => t.replace("{input}", input),
            None => input.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_shape() {
        let s = default_schedule();
        assert_eq!(s.iterations(), 18);
        let cum = s.cumulative();
        let mut expected: Vec<usize> = (0..=10).map(|i| 20 * i).collect();
        expected.extend((3..=10).map(|i| 100 * i));
        assert_eq!(cum, expected);
        assert_eq!(*cum.last().unwrap(), 1000);
        assert_eq!(s.batch_sizes.iter().sum::<usize>(), 1000);
    }

    #[test]
    fn parses_minimal_and_full_configs() {
        let c = RunConfig::from_toml(
            r#"
train_path = "train.jsonl"
test_path = "/abs/test.jsonl"
metric = "rouge_l"
strategy = "coreset"
"#,
            Some(Path::new("/data")),
        )
        .unwrap();
        assert_eq!(c.train_path, PathBuf::from("/data/train.jsonl"));
        assert_eq!(c.test_path, PathBuf::from("/abs/test.jsonl"));
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.schedule, default_schedule());
        assert_eq!(c.backend, BackendConfig::Toy(ToyConfig::default()));

        let full = RunConfig::from_toml(
            r#"
dataset = "para"
train_path = "a"
test_path = "b"
metric = "ibleu"
strategy = "mc_dropout"
pool_cap = 500
repetitions = 2
seeds = [7, 9]
eval_mode = "corpus"
test_size = 0
prompt_template = "Paraphrase: {input}"
[metric_config]
ibleu_alpha = 0.7
[strategy_params]
mc_samples = 4
[schedule]
batch_sizes = [4, 4]
[backend]
kind = "remote"
url = "http://localhost:8000"
[finetune]
epochs = 1
"#,
            None,
        )
        .unwrap();
        assert_eq!(full.metric_config.ibleu_alpha, 0.7);
        assert_eq!(full.metric_config.bleu_max_order, 4);
        assert_eq!(full.strategy_params.mc_samples, 4);
        assert_eq!(full.finetune.learning_rate, 5e-5);
        assert_eq!(full.apply_template("x"), "Paraphrase: x");
        assert_eq!(
            full.backend,
            BackendConfig::Remote {
                url: "http://localhost:8000".into()
            }
        );
        let again = RunConfig::from_toml(&full.to_toml(), None).unwrap();
        assert_eq!(again, full);
    }

    #[test]
    fn toy_backend_settings_inline() {
        let c = RunConfig::from_toml(
            "train_path='a'\ntest_path='b'\nmetric='bleu'\nstrategy='random'\n[backend]\nkind='toy'\nbase_corruption=0.4\n",
            None,
        )
        .unwrap();
        match c.backend {
            BackendConfig::Toy(t) => assert_eq!(t.base_corruption, 0.4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let base = "train_path='a'\ntest_path='b'\nmetric='bleu'\nstrategy='random'\n";
        assert!(RunConfig::from_toml(&format!("{base}repetitions=3\nseeds=[1]\n"), None).is_err());
        assert!(RunConfig::from_toml(&format!("{base}seeds=[1,1,2,3,4]\n"), None).is_err());
        assert!(RunConfig::from_toml(&format!("{base}bogus=1\n"), None).is_err());
        assert!(RunConfig::from_toml(&format!("{base}[schedule]\nbatch_sizes=[]\n"), None).is_err());
        assert!(RunConfig::from_toml(&base.replace("random", "badge"), None).is_err());
    }

    #[test]
    fn capability_requirements() {
        let mut c = RunConfig::new("a", "b", MetricKind::GScore, StrategyName::McDropout);
        c.profile_batches = false;
        let caps = c.required_capabilities();
        for cap in [
            Capability::Finetune,
            Capability::Generate,
            Capability::StochasticGenerate,
            Capability::ScoreFormality,
            Capability::ScoreSimilarity,
        ] {
            assert!(caps.contains(cap), "{cap}");
        }
        assert!(!caps.contains(Capability::Embed));
    }
}
