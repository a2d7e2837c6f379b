//! Agreement between a judge and human labels, plus drawing the
//! validation sample from provenance.
//!
//! ```bash
//! cargo run -p negrefine --example kappa
//! ```

use negrefine::analytics::{cohen_kappa, qualifying_pairs, sample_validation_set};
use negrefine::ingest::ProvenanceRecord;
use negrefine::model::{Action, Reason};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let judge = [true, true, false, false];
    let human = [true, false, false, false];
    println!("kappa = {:.3}", cohen_kappa(&judge, &human)?);
    println!("kappa of a rater with itself = {:.3}", cohen_kappa(&human, &human)?);

    // queries 0..40 with ten negatives each; every third query promotes two
    let mut provenance = Vec::new();
    for q in 0..40 {
        for j in 0..10 {
            let promoted = q % 3 == 0 && j < 2;
            provenance.push(ProvenanceRecord {
                instance_id: format!("q{q}"),
                dataset: "demo".into(),
                judge: "demo-judge".into(),
                doc_id: format!("n{j}"),
                action: if promoted { Action::PromoteToPositive } else { Action::RetainNegative },
                reason: if promoted { Reason::RankedAboveAnchor } else { Reason::NoAnswer },
                rank: Some(j + 1),
                snippet: None,
                flags: vec![],
            });
        }
    }
    let pool = qualifying_pairs(&provenance);
    let sample = sample_validation_set(&provenance, 25, 1)?;
    let positives = sample.iter().filter(|p| p.llm_label).count();
    println!("pool of {} pairs from queries with a promotion; sampled {} ({positives} judged positive)", pool.len(), sample.len());
    for p in sample.iter().take(5) {
        println!("  {} llm_label={}", p.pair_id, p.llm_label);
    }
    Ok(())
}
