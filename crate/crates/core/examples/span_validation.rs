//! Stage 1 only accepts spans that occur verbatim in the text the model saw.
//!
//! ```bash
//! cargo run -p negrefine --example span_validation
//! ```

use negrefine::ingest::{truncate, TruncationUnit};
use negrefine::model::Document;
use negrefine::stage1::{is_no_answer, validate_span, Normalization};

fn main() {
    let text = "The Eiffel Tower  was completed in\n1889 for the World's Fair. It is 330 metres tall.";
    let doc = truncate(&Document::new("eiffel", text), 12, TruncationUnit::Words);
    println!("model sees: {:?}\n", doc.truncated_text);

    let candidates = [
        "completed in 1889",         // whitespace differs from the source
        "The Eiffel Tower was",      // same, across a double space
        "  1889 for the World's Fair ",
        "completed in the year 1889", // paraphrase
        "330 metres tall",           // real text, but past the cut
        "NO_ANSWER",
        "",
    ];
    for c in candidates {
        if is_no_answer(c) {
            println!("{c:?}: no answer");
            continue;
        }
        match validate_span(c, &doc, Normalization::default()) {
            Ok(span) => println!("{c:?}: accepted as {:?} at chars {}..{}", span.text, span.char_start, span.char_end),
            Err(why) => println!("{c:?}: rejected ({why})"),
        }
    }

    let strict = Normalization { collapse_whitespace: false, ..Normalization::default() };
    println!("\nwithout whitespace collapsing: {:?}", validate_span("completed in 1889", &doc, strict).map(|s| s.text));
}
