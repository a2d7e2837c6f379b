//! The anchor rules on a hand-built ranking, without any model calls.
//!
//! ```bash
//! cargo run -p negrefine --example rule_modes
//! ```

use negrefine::model::{RankingOutcome, RefinementMode, Snippet, SnippetSet};
use negrefine::rules::{decide, RuleOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // id 1 is the positive; 2..=6 are negatives
    let snippets = SnippetSet::new(
        "who wrote the pledge of allegiance",
        Snippet::span("pos", "written by Francis Bellamy", 10, 36),
        vec![
            Snippet::span("n1", "Bellamy wrote it in 1892", 0, 24),
            Snippet::no_answer("n2"),
            Snippet::span("n3", "a Baptist minister", 5, 23),
            Snippet::no_answer("n4"),
            Snippet::span("n5", "attributed to Upham", 0, 19),
        ],
    );
    let ranking = RankingOutcome {
        order: vec![2, 4, 1, 6, 3, 5],
        ..RankingOutcome::identity(6)
    };
    println!("order: n1 > n3 > pos > n5 > n2 > n4\n");

    let variants = [
        (RefinementMode::Relabel, RuleOptions::default()),
        (RefinementMode::Filter, RuleOptions::default()),
        (RefinementMode::Filter, RuleOptions { filter_above_anchor: true }),
        (RefinementMode::RelabelAndFilter, RuleOptions::default()),
    ];
    for (mode, options) in variants {
        let decided = decide(&snippets, &ranking, mode, options)?;
        let label = if options.filter_above_anchor { format!("{mode} (strict)") } else { mode.to_string() };
        println!("{label}:");
        for d in decided.decisions {
            println!("  {:<3} rank {} -> {:?} / {:?}", d.doc_id, d.rank.unwrap_or(0), d.action, d.reason);
        }
    }
    Ok(())
}
