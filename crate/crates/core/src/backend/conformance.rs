//! Protocol conformance checks runnable against any backend, local or remote.

use super::{
    Backend, Capability, FinetuneSpec, GenerationMode, ModelHandle, ScoreItem, ScoreKind,
    TextInput, TrainPair,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConformanceReport {
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn record(&mut self, name: &'static str, outcome: Result<std::result::Result<(), String>>) {
        let (passed, detail) = match outcome {
            Ok(Ok(())) => (true, String::new()),
            Ok(Err(why)) => (false, why),
            Err(e) => (false, e.to_string()),
        };
        self.checks.push(CheckResult {
            name,
            passed,
            detail,
        });
    }
}

fn probe_inputs() -> Vec<TextInput> {
    vec![
        TextInput::new("p1", "The quick brown fox jumps over the lazy dog."),
        TextInput::new("p2", "A second, rather different probe sentence"),
        TextInput::new("p3", "The quick brown fox jumps over the lazy dog."),
    ]
}

fn probe_training() -> Vec<TrainPair> {
    vec![
        TrainPair {
            input: "translate: hello world".into(),
            target: "bonjour le monde".into(),
        },
        TrainPair {
            input: "translate: good night".into(),
            target: "bonne nuit".into(),
        },
    ]
}

fn ensure(cond: bool, why: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

/// Exercises every endpoint the backend advertises.
pub fn check(backend: &dyn Backend) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let caps = match backend.capabilities() {
        Ok(c) => c,
        Err(e) => {
            report.record("capabilities", Err(e));
            return report;
        }
    };
    report.record(
        "capabilities",
        backend
            .capabilities()
            .map(|again| ensure(again == caps, || "capabilities changed between calls".into())),
    );
    let inputs = probe_inputs();
    let spec = FinetuneSpec::default();

    if caps.contains(Capability::Finetune) {
        report.record(
            "finetune_empty_returns_base",
            backend
                .finetune(&ModelHandle::base(), &[], &spec)
                .map(|h| ensure(h.base, || format!("got `{}`", h.model_id))),
        );
        report.record(
            "finetune_rejects_non_base",
            Ok(ensure(
                backend
                    .finetune(&ModelHandle::tuned("not-a-base-model"), &probe_training(), &spec)
                    .is_err(),
                || "fine-tuning a non-base handle was accepted".into(),
            )),
        );
    }

    if caps.contains(Capability::Generate) {
        let model = if caps.contains(Capability::Finetune) {
            backend.finetune(&ModelHandle::base(), &probe_training(), &spec)
        } else {
            Ok(ModelHandle::base())
        };
        let det = GenerationMode::Deterministic;
        report.record(
            "generate_deterministic",
            model.as_ref().map_err(clone_err).and_then(|m| {
                let a = backend.generate(m, &inputs, &det)?;
                let b = backend.generate(m, &inputs, &det)?;
                Ok(ensure(a == b, || "deterministic outputs differ".into()).and_then(|_| {
                    ensure(
                        inputs.iter().all(|x| a.get(&x.id).map(Vec::len) == Some(1)),
                        || "expected exactly one generation per input".into(),
                    )
                }))
            }),
        );
        report.record(
            "token_entropies",
            backend.generate(&ModelHandle::base(), &inputs, &det).map(|g| {
                for gen in g.values().flatten() {
                    let words = gen.text.split_whitespace().count();
                    if !gen.text.trim().is_empty() && gen.token_entropies.is_empty() {
                        return Err(format!("`{}`: empty token_entropies", gen.example_id));
                    }
                    if words > 0 && gen.token_entropies.len() > 4 * words + 8 {
                        return Err(format!("`{}`: implausible token_entropies length", gen.example_id));
                    }
                    if gen.token_entropies.iter().any(|h| !h.is_finite() || *h < 0.0) {
                        return Err(format!("`{}`: token_entropies not finite and >= 0", gen.example_id));
                    }
                }
                Ok(())
            }),
        );
        if caps.contains(Capability::StochasticGenerate) {
            let mode = GenerationMode::Stochastic {
                num_samples: 3,
                seed: 11,
            };
            report.record(
                "generate_stochastic",
                backend.generate(&ModelHandle::base(), &inputs, &mode).and_then(|a| {
                    let b = backend.generate(&ModelHandle::base(), &inputs, &mode)?;
                    Ok(ensure(a.values().all(|g| g.len() == 3), || {
                        "expected 3 samples per input".into()
                    })
                    .and_then(|_| ensure(a == b, || "same seed gave different samples".into())))
                }),
            );
            let single = GenerationMode::Stochastic {
                num_samples: 1,
                seed: 0,
            };
            report.record(
                "stochastic_rejects_single_sample",
                Ok(ensure(
                    backend.generate(&ModelHandle::base(), &inputs, &single).is_err(),
                    || "num_samples = 1 was accepted".into(),
                )),
            );
        }
    }

    if caps.contains(Capability::Embed) {
        report.record(
            "embed",
            backend.embed(&inputs).and_then(|e| {
                let empty = backend.embed(&[])?;
                if e.len() != inputs.len() {
                    return Ok(Err("missing vectors".into()));
                }
                if e.get("p1")? != e.get("p3")? {
                    return Ok(Err("identical texts gave different vectors".into()));
                }
                Ok(ensure(empty.is_empty(), || "non-empty result for no inputs".into()))
            }),
        );
    }

    for kind in [ScoreKind::Formality, ScoreKind::Similarity] {
        if !caps.contains(kind.capability()) {
            continue;
        }
        let items: Vec<ScoreItem> = inputs
            .iter()
            .map(|x| ScoreItem {
                candidate: x.text.clone(),
                reference: Some(inputs[0].text.clone()),
            })
            .collect();
        let name = match kind {
            ScoreKind::Formality => "score_formality",
            ScoreKind::Similarity => "score_similarity",
        };
        report.record(
            name,
            backend.score(kind, &items).map(|s| {
                ensure(s.len() == items.len(), || "score count mismatch".into()).and_then(|_| {
                    ensure(s.iter().all(|v| (0.0..=1.0).contains(v)), || {
                        "score outside [0, 1]".into()
                    })
                })
            }),
        );
    }
    if caps.contains(Capability::ScoreSimilarity) {
        let bare = [ScoreItem {
            candidate: "x".into(),
            reference: None,
        }];
        report.record(
            "similarity_requires_reference",
            Ok(ensure(backend.score(ScoreKind::Similarity, &bare).is_err(), || {
                "similarity without a reference was accepted".into()
            })),
        );
    }
    report
}

fn clone_err(e: &crate::error::Error) -> crate::error::Error {
    crate::error::Error::Backend(e.to_string())
}

