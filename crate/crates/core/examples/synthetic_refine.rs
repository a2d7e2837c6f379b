//! Generates a corpus with planted answers, refines it against the mock
//! oracle and prints the summary table.
//!
//! ```bash
//! cargo run -p negrefine --example synthetic_refine -- 500
//! ```

use std::sync::Arc;

use negrefine::analytics::refinement_stats;
use negrefine::gateway::synth::{generate_synthetic_corpus, SynthSpec};
use negrefine::gateway::{BackendConfig, Gateway, OracleBackend};
use negrefine::ingest::read_provenance;
use negrefine::pipeline::{run, Outputs, RunPlan, Settings};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let queries = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let dir = tempfile::tempdir()?;
    let spec = SynthSpec { queries, ..SynthSpec::default() };
    let corpus = generate_synthetic_corpus(&spec, dir.path().join("corpus.jsonl"), dir.path().join("plan.jsonl"))?;
    println!(
        "{} queries x {} negatives, {} planted above the anchor, {} below",
        spec.queries,
        spec.negatives_per_query,
        corpus.gold_promote_total(),
        corpus.gold_filter_total()
    );

    let backend = OracleBackend::new(corpus.plan.clone())?;
    let gateway = Gateway::new(Arc::new(backend), BackendConfig { max_parallel_requests: 32, ..BackendConfig::default() })?;
    let outputs = Outputs::beside(dir.path().join("refined.jsonl"));
    let settings = Settings::default();
    let started = std::time::Instant::now();
    let report = run(&RunPlan::refine(dir.path().join("corpus.jsonl"), outputs.clone()), &settings, Some(&gateway)).await?;
    println!("{} requests in {:.2?}\n", report.requests_sent, started.elapsed());

    let provenance = read_provenance(&outputs.provenance)?;
    print!("{}", refinement_stats(&provenance).render_table(&settings.judge));
    Ok(())
}
