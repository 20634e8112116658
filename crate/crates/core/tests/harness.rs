use std::collections::BTreeMap;
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use alnlg::backend::{
    Backend, Capabilities, FinetuneSpec, Generation, GenerationMap, GenerationMode, ModelHandle,
    ScoreItem, ScoreKind, TextInput, ToyBackend, TrainPair,
};
use alnlg::corpus::{write_dataset, DatasetSplit, Example};
use alnlg::error::{Error, Result};
use alnlg::geometry::EmbeddingSet;
use alnlg::harness::report::{gains, significance, StatsOptions};
use alnlg::harness::store::{read_failures, RECORDS_FILE};
use alnlg::harness::{
    read_records, records_of, run, run_and_persist, EvalMode, Evaluator, Experiment, RunConfig,
    Store,
};
use alnlg::metrics::{MetricConfig, MetricKind};
use alnlg::strategies::StrategyName;
use alnlg::synth::{text_dataset, TextTaskConfig};

fn data(train: usize, test: usize) -> (DatasetSplit, DatasetSplit) {
    text_dataset(&TextTaskConfig::default(), train, test).unwrap()
}

fn small(strategy: StrategyName, seeds: &[u64]) -> RunConfig {
    let mut cfg = RunConfig::new("-", "-", MetricKind::Bleu, strategy);
    cfg.dataset = "synth".into();
    cfg.schedule.batch_sizes = vec![6, 6, 12];
    cfg.repetitions = seeds.len();
    cfg.seeds = seeds.to_vec();
    cfg.test_size = 40;
    cfg.analysis_batch_size = 10;
    cfg
}

/// Wraps the toy backend and logs what the harness sends it.
#[derive(Default)]
struct Recording {
    inner: ToyBackend,
    finetuned: Mutex<Vec<Vec<TrainPair>>>,
    generated: Mutex<Vec<String>>,
    fail_after: Option<usize>,
    generate_calls: AtomicUsize,
}

impl Backend for Recording {
    fn capabilities(&self) -> Result<Capabilities> {
        self.inner.capabilities()
    }
    fn finetune(&self, base: &ModelHandle, ex: &[TrainPair], spec: &FinetuneSpec) -> Result<ModelHandle> {
        self.finetuned.lock().unwrap().push(ex.to_vec());
        self.inner.finetune(base, ex, spec)
    }
    fn generate(&self, m: &ModelHandle, inputs: &[TextInput], mode: &GenerationMode) -> Result<GenerationMap> {
        let k = self.generate_calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|n| k >= n) {
            return Err(Error::Backend("connection reset".into()));
        }
        self.generated.lock().unwrap().extend(inputs.iter().map(|i| i.text.clone()));
        self.inner.generate(m, inputs, mode)
    }
    fn embed(&self, inputs: &[TextInput]) -> Result<EmbeddingSet> {
        self.inner.embed(inputs)
    }
    fn score(&self, kind: ScoreKind, items: &[ScoreItem]) -> Result<Vec<f64>> {
        self.inner.score(kind, items)
    }
}

#[test]
fn records_follow_the_schedule() {
    let (train, test) = data(120, 40);
    let cfg = small(StrategyName::Coreset, &[1, 2]);
    let outs = Experiment::new(&cfg, &train, &test, &ToyBackend::default())
        .unwrap()
        .run_seeds(&cfg.seeds)
        .unwrap();
    let recs = records_of(&outs);
    assert_eq!(recs.len(), 8);
    for o in &outs {
        assert!(o.is_complete());
        let counts: Vec<usize> = o.records.iter().map(|r| r.labeled_count).collect();
        assert_eq!(counts, vec![0, 6, 12, 24]);
        assert!(o.records[0].selected_ids.is_empty());
        assert_eq!(o.records[3].selected_ids.len(), 12);
        assert!(o.profile.as_ref().is_some_and(|p| p.batch_size == 10));
    }
}

#[test]
fn finetuning_always_sees_all_labeled_examples() {
    let (train, test) = data(120, 40);
    let mut cfg = small(StrategyName::Random, &[3]);
    cfg.prompt_template = Some("Paraphrase: {input}".into());
    let backend = Recording::default();
    let outs = Experiment::new(&cfg, &train, &test, &backend).unwrap().run_seeds(&cfg.seeds).unwrap();
    let calls = backend.finetuned.lock().unwrap();
    let sizes: Vec<usize> = calls.iter().map(|c| c.len()).collect();
    assert_eq!(sizes, vec![6, 12, 24]);
    let index = train.index();
    let mut so_far = Vec::new();
    for (call, rec) in calls.iter().zip(&outs[0].records[1..]) {
        so_far.extend(rec.selected_ids.iter().cloned());
        let expected: Vec<String> = so_far
            .iter()
            .map(|id| format!("Paraphrase: {}", index[id.as_str()].input))
            .collect();
        assert_eq!(call.iter().map(|p| p.input.clone()).collect::<Vec<_>>(), expected);
    }
    assert!(backend.generated.lock().unwrap().iter().all(|t| t.starts_with("Paraphrase: ")));
}

#[test]
fn zero_shot_and_pool_do_not_depend_on_strategy() {
    let (train, test) = data(150, 40);
    let toy = ToyBackend::default();
    let mut zero = Vec::new();
    let mut firsts = Vec::new();
    for s in StrategyName::ALL {
        let cfg = small(s, &[11]);
        let o = Experiment::new(&cfg, &train, &test, &toy).unwrap().run_seed(11).unwrap();
        assert!(o.is_complete(), "{s}: {:?}", o.failure);
        let mut r0 = o.records[0].clone();
        r0.strategy.clear();
        r0.wall_time_s = 0.0;
        zero.push(r0);
        firsts.push(o.records[1].selected_ids.clone());
    }
    assert!(zero.windows(2).all(|w| w[0] == w[1]));
    // Random and the rest agree on nothing in particular, but every batch
    // comes out of the same capped pool.
    let pool = alnlg::corpus::PoolState::init(&train, 10_000, 11).unwrap();
    for b in firsts {
        assert!(b.iter().all(|id| pool.unlabeled().contains(id)));
    }
}

#[test]
fn backend_failure_keeps_partial_records_and_resume_finishes() {
    let (train, test) = data(120, 40);
    let cfg = small(StrategyName::Random, &[5]);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path(), false).unwrap();
    // Zero-shot and the first two evaluations succeed, the third fails.
    let flaky = Recording {
        fail_after: Some(3),
        ..Default::default()
    };
    let exp = Experiment::new(&cfg, &train, &test, &flaky).unwrap();
    let summary = run_and_persist(&cfg, &exp, &store, false).unwrap();
    assert_eq!(summary.failed, vec![5]);
    let recs = read_records(dir.path()).unwrap();
    assert_eq!(recs.len(), 3);
    let failures = read_failures(dir.path()).unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].3.iteration, 3);
    assert!(failures[0].3.message.contains("connection reset"));

    assert!(run_and_persist(&cfg, &exp, &store, false).is_err());
    let toy = ToyBackend::default();
    let exp = Experiment::new(&cfg, &train, &test, &toy).unwrap();
    let summary = run_and_persist(&cfg, &exp, &store, true).unwrap();
    assert_eq!(summary.ran, vec![5]);
    assert_eq!(read_records(dir.path()).unwrap().len(), 4);
    assert!(read_failures(dir.path()).unwrap().is_empty());
}

#[test]
fn persist_resume_and_directory_rules() {
    let (train, test) = data(120, 40);
    let cfg = small(StrategyName::Idds, &[1, 2]);
    let toy = ToyBackend::default();
    let exp = Experiment::new(&cfg, &train, &test, &toy).unwrap();

    let missing = tempfile::tempdir().unwrap().path().join("nope");
    assert!(Store::open(&missing, false).is_err());
    let store = Store::open(&missing, true).unwrap();

    run_and_persist(&cfg, &exp, &store, false).unwrap();
    let first = fs::read(missing.join(RECORDS_FILE)).unwrap();
    assert_eq!(read_records(&missing).unwrap().len(), 8);
    assert!(store.snapshot_path(&cfg).exists());

    let summary = run_and_persist(&cfg, &exp, &store, true).unwrap();
    assert_eq!(summary.skipped, vec![1, 2]);
    assert!(summary.ran.is_empty());
    assert_eq!(fs::read(missing.join(RECORDS_FILE)).unwrap(), first);

    // A second strategy shares the directory.
    let other = small(StrategyName::Random, &[1, 2]);
    let exp2 = Experiment::new(&other, &train, &test, &toy).unwrap();
    run_and_persist(&other, &exp2, &store, false).unwrap();
    assert_eq!(read_records(&missing).unwrap().len(), 16);

    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with(
        "dataset,strategy,seed,iteration,labeled_count,metric_name,metric_value,selected_ids,wall_time_s\n"
    ));
    let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[..6], ["synth", "idds", "1", "1", "6", "bleu"]);
    assert_eq!(row[7].split(';').count(), 6);
    assert_eq!(row[8], "0");
}

#[test]
fn run_from_config_file() {
    let (train, test) = data(100, 20);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&train, dir.path().join("train.jsonl")).unwrap();
    write_dataset(&test, dir.path().join("test.jsonl")).unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        r#"
dataset = "synth"
train_path = "train.jsonl"
test_path = "test.jsonl"
metric = "ibleu"
strategy = "mte"
repetitions = 1
seeds = [3]
eval_mode = "corpus"
[schedule]
batch_sizes = [5, 5]
"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    let outs = run(&cfg).unwrap();
    assert_eq!(outs[0].records.len(), 3);
    assert!(outs[0].records.iter().all(|r| r.metric_name == "ibleu"));
}

/// Serves fixed generations by input text.
struct Fixed(BTreeMap<String, String>);

impl Backend for Fixed {
    fn capabilities(&self) -> Result<Capabilities> {
        Ok(Capabilities::all())
    }
    fn finetune(&self, b: &ModelHandle, _: &[TrainPair], _: &FinetuneSpec) -> Result<ModelHandle> {
        Ok(b.clone())
    }
    fn generate(&self, _: &ModelHandle, inputs: &[TextInput], _: &GenerationMode) -> Result<GenerationMap> {
        Ok(inputs
            .iter()
            .map(|i| {
                let text = self.0[&i.text].clone();
                let n = text.split_whitespace().count();
                (i.id.clone(), vec![Generation { example_id: i.id.clone(), text, token_entropies: vec![0.0; n] }])
            })
            .collect())
    }
    fn embed(&self, _: &[TextInput]) -> Result<EmbeddingSet> {
        unimplemented!()
    }
    fn score(&self, _: ScoreKind, items: &[ScoreItem]) -> Result<Vec<f64>> {
        Ok(vec![1.0; items.len()])
    }
}

fn ev(backend: &dyn Backend, metric: MetricKind, eval_mode: EvalMode) -> Evaluator<'_> {
    Evaluator {
        backend,
        metric,
        metric_config: MetricConfig::default(),
        eval_mode,
        prompt_template: None,
    }
}

#[test]
fn evaluate_cases() {
    let examples = vec![
        Example::new("a", "in a", vec!["the cat sat on the mat".into()]),
        Example::new("b", "in b", vec!["dogs bark".into()]),
    ];
    let perfect = Fixed(
        [("in a", "the cat sat on the mat"), ("in b", "dogs bark")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    );
    let half = Fixed(
        [("in a", "the cat sat on the mat"), ("in b", "zebra")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    );
    let (perfect, half) = (&perfect, &half);
    let base = ModelHandle::base();
    for m in [MetricKind::Bleu, MetricKind::RougeL] {
        for mode in [EvalMode::MeanSentence, EvalMode::Corpus] {
            assert_eq!(ev(perfect, m, mode).evaluate(&base, &examples).unwrap(), 1.0);
        }
        assert_eq!(ev(half, m, EvalMode::MeanSentence).evaluate(&base, &examples).unwrap(), 0.5);
    }
    let one = &examples[..1];
    let sentence = ev(half, MetricKind::Bleu, EvalMode::MeanSentence).evaluate(&base, one).unwrap();
    let corpus = ev(half, MetricKind::Bleu, EvalMode::Corpus).evaluate(&base, one).unwrap();
    assert_eq!(sentence, corpus);
    assert_eq!(ev(perfect, MetricKind::GScore, EvalMode::MeanSentence).evaluate(&base, &examples).unwrap(), 1.0);
    assert!(ev(perfect, MetricKind::Bleu, EvalMode::MeanSentence).evaluate(&base, &[]).is_err());
}

#[test]
fn statistics_consume_every_post_zero_shot_pair() {
    let (train, test) = data(150, 30);
    let toy = ToyBackend::default();
    let mut recs = Vec::new();
    for s in [StrategyName::Random, StrategyName::Mte, StrategyName::Oracle] {
        let cfg = small(s, &[1, 2, 3]);
        let outs = Experiment::new(&cfg, &train, &test, &toy).unwrap().run_seeds(&cfg.seeds).unwrap();
        recs.extend(records_of(&outs));
    }
    let sig = significance(&recs, "random", &StatsOptions::default()).unwrap();
    assert_eq!(sig.len(), 2);
    for row in &sig {
        assert_eq!(row.pairs, 9);
        assert_eq!(row.p_bonferroni, (row.p_raw * 2.0).min(1.0));
    }
    let g = gains(&recs, "random").unwrap();
    assert_eq!(g.len(), 18);
    assert!(significance(&recs, "coreset", &StatsOptions::default()).is_err());
}

/// Fingerprint of a fixed run's record file. The same value must come out
/// of the parallel and the sequential build.
#[test]
fn record_bytes_are_pinned_across_execution_modes() {
    let (train, test) = data(200, 40);
    let toy = ToyBackend::default();
    let mut lines = Vec::new();
    for s in StrategyName::ALL {
        let mut cfg = small(s, &[21, 22]);
        cfg.strategy_params.mc_samples = 3;
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), false).unwrap();
        let exp = Experiment::new(&cfg, &train, &test, &toy).unwrap();
        run_and_persist(&cfg, &exp, &store, false).unwrap();
        lines.push(fs::read_to_string(dir.path().join(RECORDS_FILE)).unwrap());
    }
    let h = lines
        .iter()
        .fold(alnlg::seeding::StableHasher::new(), |h, l| h.str(l));
    assert_eq!(format!("{:016x}", h.finish()), "1446cb60401f903b", "mode {}", alnlg::par::MODE);
}
