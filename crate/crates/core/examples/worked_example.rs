//! One query, one positive, three mined negatives, walked through both
//! stages and all three refinement modes.
//!
//! ```bash
//! cargo run -p negrefine --example worked_example
//! ```

use std::sync::Arc;

use negrefine::gateway::mock::{DocPlan, QueryPlan};
use negrefine::gateway::{BackendConfig, Gateway, OracleBackend, OraclePlan, RankingMode};
use negrefine::model::{Document, RefinementMode, TrainingInstance};
use negrefine::rules::{apply_decisions, decide, RuleOptions};
use negrefine::stage1::{run_stage1, Normalization};
use negrefine::stage2::rank_snippets;

const QUERY: &str = "when was the united states pledge of allegiance adopted";

fn plan() -> OraclePlan {
    let doc = |id: &str, span: Option<&str>, directness: Option<f64>| DocPlan {
        doc_id: id.into(),
        span: span.map(Into::into),
        directness,
    };
    OraclePlan {
        queries: vec![QueryPlan {
            instance_id: "pledge".into(),
            query: QUERY.into(),
            docs: vec![
                doc("A", Some("adopted by Congress as the pledge in 1942"), Some(0.5)),
                doc("B", Some("June 22, 1942"), Some(0.9)),
                doc("C", Some("written in the 1890s"), Some(0.2)),
                doc("D", None, None),
            ],
            gold_promote: vec!["B".into()],
            gold_filter: vec!["C".into()],
        }],
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let instance = TrainingInstance::new(
        "pledge",
        QUERY,
        vec![Document::new("A", "The pledge was formally adopted by Congress as the pledge in 1942.")],
        vec![
            Document::new("B", "Congress officially recognized the Pledge on June 22, 1942, in the following form."),
            Document::new("C", "The pledge was written in the 1890s and revised several times."),
            Document::new("D", "Bellamy was a Baptist minister and a Christian socialist."),
        ],
    )?;
    // The oracle stands in for a served model; swap in an HttpBackend for real use.
    let gateway = Gateway::new(Arc::new(OracleBackend::new(plan())?), BackendConfig::default())?;

    let stage1 = run_stage1(&instance, &gateway, Normalization::default()).await?;
    println!("snippets:");
    for (id, s) in stage1.snippets.entries() {
        println!("  [{id}] {:<2} {}", s.doc_id, s.display_text());
    }

    let stage2 = rank_snippets(&instance, &stage1.snippets, &gateway, RankingMode::SnippetCentric).await?;
    let order: Vec<&str> = stage2
        .ranking
        .order
        .iter()
        .map(|&id| stage1.snippets.get(id).unwrap().doc_id.as_str())
        .collect();
    println!("ranking: {}", order.join(" > "));

    for mode in RefinementMode::ALL {
        let decided = decide(&stage1.snippets, &stage2.ranking, mode, RuleOptions::default())?;
        for d in &decided.decisions {
            println!("  {mode:<7} {} -> {:?} ({:?})", d.doc_id, d.action, d.reason);
        }
        let refined = apply_decisions(&instance, decided.decisions, mode, decided.flags)?;
        let ids = |docs: &[Document]| docs.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>().join(",");
        println!("{mode:<7} positives [{}] negatives [{}]", ids(&refined.new_positives), ids(&refined.new_negatives));
    }
    Ok(())
}
