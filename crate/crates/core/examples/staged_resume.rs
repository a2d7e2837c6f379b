//! Runs the stages separately through dump files, then kills the backend
//! halfway through a second run and resumes it.
//!
//! ```bash
//! cargo run -p negrefine --example staged_resume
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use negrefine::gateway::synth::{generate, SynthSpec};
use negrefine::gateway::{Backend, BackendConfig, BackendError, ChatRequest, Gateway, OracleBackend, RetryPolicy};
use negrefine::pipeline::{run, Outputs, RunPlan, Settings};

/// Serves `budget` requests, then refuses every call.
struct Outage {
    inner: OracleBackend,
    budget: usize,
    used: AtomicUsize,
}

#[async_trait]
impl Backend for Outage {
    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(BackendError::Transport("connection refused".into()));
        }
        self.inner.chat(request).await
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = |name: &str| dir.path().join(name);
    let synth = generate(&SynthSpec { queries: 50, ..SynthSpec::default() })?;
    synth.write(path("corpus.jsonl"), path("plan.jsonl"))?;
    let settings = Settings::default();
    let config = BackendConfig { retry: RetryPolicy::no_delay(0), ..BackendConfig::default() };
    let oracle = || Gateway::new(Arc::new(OracleBackend::new(synth.plan.clone()).unwrap()), config.clone());

    let gw = oracle()?;
    let s1 = run(&RunPlan::stage1_only(path("corpus.jsonl"), path("s1.jsonl")), &settings, Some(&gw)).await?;
    let s2 = run(&RunPlan::stage2_only(path("corpus.jsonl"), path("s1.jsonl"), path("s2.jsonl")), &settings, Some(&gw)).await?;
    let staged = Outputs::beside(path("staged.jsonl"));
    let rules = run(&RunPlan::apply_rules(path("corpus.jsonl"), path("s1.jsonl"), path("s2.jsonl"), staged.clone()), &settings, None).await?;
    println!("stage1 {} requests, stage2 {} requests, apply-rules {}", s1.requests_sent, s2.requests_sent, rules.requests_sent);

    let out = Outputs::beside(path("resumed.jsonl"));
    let plan = RunPlan::refine(path("corpus.jsonl"), out.clone()).with_dumps(Some(path("d1.jsonl")), Some(path("d2.jsonl")));
    let outage = Outage { inner: OracleBackend::new(synth.plan.clone())?, budget: 250, used: AtomicUsize::new(0) };
    let first = run(&plan, &settings, Some(&Gateway::new(Arc::new(outage), config.clone())?)).await?;
    println!("with outage: {} of {} instances incomplete", first.incomplete(), first.instances);

    let second = run(&plan.clone().resume(true), &settings, Some(&oracle()?)).await?;
    println!(
        "resumed: {} stage1 and {} stage2 groups replayed, {} new requests, {} incomplete",
        second.stage1_replayed, second.stage2_replayed, second.requests_sent, second.incomplete()
    );
    let same = std::fs::read(&out.refined)? == std::fs::read(&staged.refined)?;
    println!("resumed output identical to the staged run: {same}");
    Ok(())
}
