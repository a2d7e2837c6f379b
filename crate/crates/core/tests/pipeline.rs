mod common;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use negrefine::gateway::prompt::{parse_stage1_prompt, parse_stage2_prompt};
use negrefine::gateway::synth::{generate, SynthSpec};
use negrefine::gateway::{
    Backend, BackendConfig, BackendError, ChatRequest, Gateway, OracleBackend, OraclePlan, RankingMode, RetryPolicy,
    ScriptedBackend,
};
use negrefine::ingest::{read_provenance, OnMalformed};
use negrefine::model::{Action, Flag, RefinementMode};
use negrefine::pipeline::{run, Outputs, PipelineError, RunPlan, Settings};

use common::*;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    plan: OraclePlan,
}

fn fixture(queries: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let spec = SynthSpec {
        queries,
        seed,
        ..SynthSpec::default()
    };
    let synth = generate(&spec).unwrap();
    let corpus = root.join("corpus.jsonl");
    synth.write(&corpus, root.join("plan.jsonl")).unwrap();
    Fixture {
        _dir: dir,
        root,
        corpus,
        plan: synth.plan,
    }
}

fn oracle_gateway(plan: &OraclePlan, parallel: usize) -> (Arc<OracleBackend>, Gateway) {
    let backend = Arc::new(OracleBackend::new(plan.clone()).unwrap());
    let gw = Gateway::new(
        backend.clone(),
        BackendConfig {
            max_parallel_requests: parallel,
            retry: RetryPolicy::no_delay(0),
            ..BackendConfig::default()
        },
    )
    .unwrap();
    (backend, gw)
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

fn same_outputs(a: &Outputs, b: &Outputs) -> bool {
    bytes(&a.refined) == bytes(&b.refined) && bytes(&a.provenance) == bytes(&b.provenance)
}

/// Answers from an oracle until `budget` calls are spent, then fails.
struct Flaky {
    inner: OracleBackend,
    budget: usize,
    calls: AtomicUsize,
}

#[async_trait]
impl Backend for Flaky {
    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(BackendError::Status {
                code: 503,
                retry_after: None,
                body: "down".into(),
            });
        }
        self.inner.chat(request).await
    }
}

#[tokio::test]
async fn stage_wise_run_matches_monolithic() {
    let f = fixture(40, 3);
    let (_, gw) = oracle_gateway(&f.plan, 8);
    let settings = Settings::default();

    let mono = Outputs::beside(f.root.join("mono.jsonl"));
    run(&RunPlan::refine(&f.corpus, mono.clone()), &settings, Some(&gw)).await.unwrap();

    let (d1, d2) = (f.root.join("s1.jsonl"), f.root.join("s2.jsonl"));
    run(&RunPlan::stage1_only(&f.corpus, &d1), &settings, Some(&gw)).await.unwrap();
    run(&RunPlan::stage2_only(&f.corpus, &d1, &d2), &settings, Some(&gw)).await.unwrap();
    let staged = Outputs::beside(f.root.join("staged.jsonl"));
    let report = run(&RunPlan::apply_rules(&f.corpus, &d1, &d2, staged.clone()), &settings, None).await.unwrap();

    assert!(same_outputs(&mono, &staged));
    assert_eq!(report.stage1_replayed, 40);
    assert_eq!(report.stage2_replayed, 40);
    assert_eq!(report.requests_sent, 0);
}

#[tokio::test]
async fn apply_rules_needs_no_backend_and_rejects_missing_dumps() {
    let f = fixture(5, 4);
    let out = Outputs::beside(f.root.join("o.jsonl"));
    let missing = f.root.join("absent.jsonl");
    let err = run(&RunPlan::apply_rules(&f.corpus, &missing, &missing, out.clone()), &Settings::default(), None)
        .await
        .unwrap_err();
    assert!(matches!(err, PipelineError::MissingDump(_)), "{err:?}");

    let err = run(&RunPlan::refine(&f.corpus, out), &Settings::default(), None).await.unwrap_err();
    assert!(matches!(err, PipelineError::NoBackend(_)), "{err:?}");
}

#[tokio::test]
async fn repeated_runs_are_byte_identical() {
    let f = fixture(60, 5);
    let settings = Settings {
        window: 7,
        ..Settings::default()
    };
    let mut outs = Vec::new();
    for (k, parallel) in [1, 16].into_iter().enumerate() {
        let (_, gw) = oracle_gateway(&f.plan, parallel);
        let out = Outputs::beside(f.root.join(format!("run{k}.jsonl")));
        run(&RunPlan::refine(&f.corpus, out.clone()), &settings, Some(&gw)).await.unwrap();
        outs.push(out);
    }
    assert!(same_outputs(&outs[0], &outs[1]));
}

#[tokio::test]
async fn in_flight_requests_respect_the_limit() {
    let f = fixture(30, 6);
    let backend = Arc::new(OracleBackend::new(f.plan.clone()).unwrap().with_delay(Duration::from_millis(2)));
    let gw = Gateway::new(
        backend.clone(),
        BackendConfig {
            max_parallel_requests: 5,
            ..BackendConfig::default()
        },
    )
    .unwrap();
    let out = Outputs::beside(f.root.join("o.jsonl"));
    let report = run(&RunPlan::refine(&f.corpus, out), &Settings::default(), Some(&gw)).await.unwrap();
    assert_eq!(backend.max_in_flight(), 5);
    assert_eq!(backend.calls(), report.requests_sent);
    assert_eq!(report.requests_sent, 30 * 11 + 30);
}

#[tokio::test]
async fn backend_outage_is_flagged_and_resume_finishes_the_job() {
    let f = fixture(50, 8);
    let settings = Settings::default();
    let clean = Outputs::beside(f.root.join("clean.jsonl"));
    let (_, gw) = oracle_gateway(&f.plan, 4);
    let clean_report = run(&RunPlan::refine(&f.corpus, clean.clone()), &settings, Some(&gw)).await.unwrap();

    let (d1, d2) = (f.root.join("d1.jsonl"), f.root.join("d2.jsonl"));
    let out = Outputs::beside(f.root.join("out.jsonl"));
    let plan = RunPlan::refine(&f.corpus, out.clone()).with_dumps(Some(d1.clone()), Some(d2.clone()));
    let flaky = Arc::new(Flaky {
        inner: OracleBackend::new(f.plan.clone()).unwrap(),
        budget: 300,
        calls: AtomicUsize::new(0),
    });
    let broken = Gateway::new(
        flaky,
        BackendConfig {
            retry: RetryPolicy::no_delay(1),
            ..BackendConfig::default()
        },
    )
    .unwrap();
    let first = run(&plan, &settings, Some(&broken)).await.unwrap();
    assert!(first.incomplete() > 0);
    let prov = read_provenance(&out.provenance).unwrap();
    assert!(prov.iter().any(|r| r.flags.contains(&Flag::Stage1Incomplete)));
    assert!(prov
        .iter()
        .filter(|r| r.flags.contains(&Flag::Stage1Incomplete) || r.flags.contains(&Flag::Stage2Incomplete))
        .all(|r| r.action == Action::RetainNegative));

    let (_, gw) = oracle_gateway(&f.plan, 4);
    let second = run(&plan.clone().resume(true), &settings, Some(&gw)).await.unwrap();
    assert_eq!(second.incomplete(), 0);
    assert!(second.stage1_replayed > 0);
    assert!(second.requests_sent < clean_report.requests_sent);
    assert!(same_outputs(&clean, &out));
}

#[tokio::test]
async fn modes_differ_only_where_the_rules_say() {
    let f = fixture(30, 9);
    let (_, gw) = oracle_gateway(&f.plan, 8);
    let mut results = Vec::new();
    for mode in RefinementMode::ALL {
        let out = Outputs::beside(f.root.join(format!("{mode}.jsonl")));
        let settings = Settings { mode, ..Settings::default() };
        let report = run(&RunPlan::refine(&f.corpus, out), &settings, Some(&gw)).await.unwrap();
        results.push(report.summary.unwrap());
    }
    let [filter, relabel, both] = [&results[0], &results[1], &results[2]];
    assert_eq!((filter.promoted, relabel.filtered), (0, 0));
    assert_eq!(both.promoted, relabel.promoted);
    assert_eq!(both.filtered, filter.filtered);
    assert_eq!(both.retained + both.promoted, filter.retained);
    assert_eq!(both.retained + both.filtered, relabel.retained);
}

#[tokio::test]
async fn passage_centric_ranking_sends_passages() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = write_pledge(dir.path());
    let stage2_entries: Arc<Mutex<Vec<Vec<Option<String>>>>> = Arc::default();
    let seen = stage2_entries.clone();
    let backend = Arc::new(ScriptedBackend::new(move |prompt| {
        if let Some((_, doc)) = parse_stage1_prompt(prompt) {
            return Ok(doc.split_whitespace().take(3).collect::<Vec<_>>().join(" "));
        }
        let parsed = parse_stage2_prompt(prompt).expect("stage 2 prompt");
        assert_eq!(parsed.mode, RankingMode::PassageCentric);
        seen.lock().unwrap().push(parsed.entries);
        Ok("[2] > [1] > [3] > [4]".into())
    }));
    let gw = Gateway::new(backend, BackendConfig::default()).unwrap();
    let settings = Settings {
        ranking_mode: RankingMode::PassageCentric,
        ..Settings::default()
    };
    let out = Outputs::beside(dir.path().join("o.jsonl"));
    run(&RunPlan::refine(&corpus, out.clone()), &settings, Some(&gw)).await.unwrap();
    let entries = stage2_entries.lock().unwrap();
    assert_eq!(entries.len(), 1);
    assert!(entries[0][1].as_deref().unwrap().starts_with("Congress officially recognized the Pledge"));
    assert_eq!(refined_ids(&out.refined), vec![(vec!["A".into(), "B".into()], vec![])]);
}

#[tokio::test]
async fn malformed_records_abort_or_skip() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, plan) = write_pledge(dir.path());
    let mut text = std::fs::read_to_string(&corpus).unwrap();
    text.push_str("{not json\n{\"query\": \"q\", \"pos\": [], \"neg\": []}\n");
    std::fs::write(&corpus, text).unwrap();
    let (_, gw) = oracle_gateway(&OraclePlan::read_jsonl(&plan).unwrap(), 2);
    let out = Outputs::beside(dir.path().join("o.jsonl"));
    let err = run(&RunPlan::refine(&corpus, out.clone()), &Settings::default(), Some(&gw)).await.unwrap_err();
    match err {
        PipelineError::Record(e) => assert_eq!(e.line, 2),
        other => panic!("{other:?}"),
    }

    let mut settings = Settings::default();
    settings.reader.on_malformed = OnMalformed::Skip;
    let report = run(&RunPlan::refine(&corpus, out.clone()), &settings, Some(&gw)).await.unwrap();
    assert_eq!((report.instances, report.skipped_records), (1, 2));
    assert_eq!(refined_ids(&out.refined).len(), 1);
}
