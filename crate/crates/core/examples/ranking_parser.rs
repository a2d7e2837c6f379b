//! How raw listwise answers become permutations, and what gets repaired.
//!
//! ```bash
//! cargo run -p negrefine --example ranking_parser
//! ```

use negrefine::gateway::prompt::{build_stage2_prompt, format_ranking, EntryText, RankingMode};
use negrefine::stage2::parse_ranking;

fn main() {
    let entries = [
        EntryText::Text("adopted by Congress as the pledge in 1942"),
        EntryText::Text("June 22, 1942"),
        EntryText::Text("written in the 1890s"),
        EntryText::NoAnswer,
    ];
    println!("{}\n", build_stage2_prompt("when was the pledge adopted", &entries, RankingMode::SnippetCentric));

    let n = entries.len();
    let responses = [
        format_ranking(&[2, 1, 3, 4]),
        "2 > 1 > 3 > 4".to_string(),
        "[2] > [1] > [2] > [4]".to_string(),
        "[2] > [7] > [1]".to_string(),
        "Ranking: [3] > [1]. The others are irrelevant.".to_string(),
        "I am unable to rank these snippets.".to_string(),
    ];
    for raw in &responses {
        match parse_ranking(raw, n) {
            Ok((order, repairs)) if repairs.is_empty() => println!("{raw:?}\n  -> {order:?}"),
            Ok((order, repairs)) => {
                let notes: Vec<String> = repairs.iter().map(ToString::to_string).collect();
                println!("{raw:?}\n  -> {order:?} after repairs: {}", notes.join("; "));
            }
            Err(e) => println!("{raw:?}\n  -> {e}"),
        }
    }
}
