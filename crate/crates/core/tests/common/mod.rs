#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use negrefine::gateway::mock::{DocPlan, OraclePlan, QueryPlan};
use negrefine::model::{Action, RefinementMode};

pub const BIN: &str = env!("CARGO_BIN_EXE_negrefine");

pub const PLEDGE_QUERY: &str = "when was the united states pledge of allegiance adopted";

/// A positive, B answers more directly, C answers less directly, D has no answer.
pub fn write_pledge(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = dir.join("pledge.jsonl");
    let plan_path = dir.join("pledge.plan.jsonl");
    let record = serde_json::json!({
        "id": "pledge",
        "query": PLEDGE_QUERY,
        "pos": [{"id": "A", "text": "The pledge was formally adopted by Congress as the pledge in 1942."}],
        "neg": [
            {"id": "B", "text": "Congress officially recognized the Pledge on June 22, 1942, in the following form."},
            {"id": "C", "text": "The pledge was written in the 1890s and revised several times."},
            {"id": "D", "text": "Bellamy was a Baptist minister and a Christian socialist."},
        ],
    });
    std::fs::write(&corpus, format!("{record}\n")).unwrap();
    let plan = OraclePlan {
        queries: vec![QueryPlan {
            instance_id: "pledge".into(),
            query: PLEDGE_QUERY.into(),
            docs: vec![
                doc("A", Some("adopted by Congress as the pledge in 1942"), Some(0.5)),
                doc("B", Some("June 22, 1942"), Some(0.9)),
                doc("C", Some("written in the 1890s"), Some(0.2)),
                doc("D", None, None),
            ],
            gold_promote: vec!["B".into()],
            gold_filter: vec!["C".into()],
        }],
    };
    plan.write_jsonl(&plan_path).unwrap();
    (corpus, plan_path)
}

fn doc(id: &str, span: Option<&str>, directness: Option<f64>) -> DocPlan {
    DocPlan {
        doc_id: id.into(),
        span: span.map(Into::into),
        directness,
    }
}

pub fn run_bin(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn negrefine")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Doc ids of a refined record's `pos` and `neg` lists.
pub fn refined_ids(path: &Path) -> Vec<(Vec<String>, Vec<String>)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let ids = |key: &str| {
                v[key]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|d| d["id"].as_str().unwrap().to_string())
                    .collect::<Vec<_>>()
            };
            (ids("pos"), ids("neg"))
        })
        .collect()
}

/// Straight transcription of the three rules, written without reference to
/// the library: `has_answer[i]` for negative i (snippet id i + 2), `order`
/// lists snippet ids best first, the anchor is id 1.
pub fn naive_rules(has_answer: &[bool], order: &[usize], mode: RefinementMode) -> Vec<Action> {
    let pos_of = |id: usize| order.iter().position(|&x| x == id).unwrap();
    let anchor = pos_of(1);
    let relabel = mode != RefinementMode::Filter;
    let filter = mode != RefinementMode::Relabel;
    (0..has_answer.len())
        .map(|i| {
            let here = pos_of(i + 2);
            if !has_answer[i] {
                Action::RetainNegative
            } else if here < anchor && relabel {
                Action::PromoteToPositive
            } else if here > anchor && filter {
                Action::FilterOut
            } else {
                Action::RetainNegative
            }
        })
        .collect()
}

/// All permutations of `1..=n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (1..=n).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
}
