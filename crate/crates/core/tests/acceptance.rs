//! Acceptance suite. Runs without the libtest harness so each criterion
//! prints exactly one PASS/FAIL line.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use negrefine::analytics::{cohen_kappa, refinement_stats, StatsRecord};
use negrefine::gateway::prompt::{format_ranking, parse_stage1_prompt};
use negrefine::gateway::synth::{generate, SynthSpec};
use negrefine::gateway::{BackendConfig, Gateway, OracleBackend, RetryPolicy, ScriptedBackend};
use negrefine::ingest::{read_provenance, ProvenanceRecord};
use negrefine::model::{Action, Document, RankingOutcome, Reason, RefinementMode, Snippet, SnippetContent, SnippetSet};
use negrefine::pipeline::{run, Outputs, RunPlan, Settings};
use negrefine::rules::{decide, is_legal, RuleOptions};
use negrefine::stage1::{char_slice, extract_snippet, Normalization};
use negrefine::stage2::parse_ranking;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const WORKED_EXAMPLE_MAX: Duration = Duration::from_secs(1);
const RULES_MAX: Duration = Duration::from_secs(5);
const SYNTH_MAX: Duration = Duration::from_secs(30);
const MEAN_TOLERANCE: f64 = 0.05;
const KAPPA_TOLERANCE: f64 = 1e-9;
const SPAN_FUZZ_PAIRS: usize = 10_000;
const MUTILATIONS: usize = 10_000;
const KAPPA_SYMMETRY_PAIRS: usize = 1_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap()
}

fn pledge_worked_example() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, plan) = write_pledge(dir.path());
    let expected = [
        ("r+f", vec!["A", "B"], vec!["D"]),
        ("relabel", vec!["A", "B"], vec!["C", "D"]),
        ("filter", vec!["A"], vec!["B", "D"]),
    ];
    let mut slowest = Duration::ZERO;
    for (mode, pos, neg) in expected {
        let out = dir.path().join(format!("{mode}.jsonl"));
        let started = Instant::now();
        let o = run_bin(&[
            "refine",
            "--oracle-plan",
            path_str(&plan),
            "--in",
            path_str(&corpus),
            "--out",
            path_str(&out),
            "--mode",
            mode,
        ]);
        let elapsed = started.elapsed();
        slowest = slowest.max(elapsed);
        check(o.status.success(), || format!("{mode}: exit {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr)))?;
        let got = refined_ids(&out);
        let want = vec![(
            pos.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            neg.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        )];
        check(got == want, || format!("{mode}: got {got:?}, want {want:?}"))?;
        check(elapsed < WORKED_EXAMPLE_MAX, || format!("{mode}: took {elapsed:?}"))?;
        if mode == "r+f" {
            let prov = read_provenance(Outputs::beside(&out).provenance).unwrap();
            let filtered: Vec<_> = prov.iter().filter(|r| r.action == Action::FilterOut).map(|r| &r.doc_id).collect();
            check(filtered == ["C"], || format!("filtered {filtered:?}"))?;
        }
    }
    Ok(format!("3 modes, slowest run {slowest:.2?}"))
}

fn rule_engine_oracle() -> Outcome {
    let started = Instant::now();
    let mut cases = 0usize;
    let mut at_four = 0usize;
    for n in 0..=4usize {
        let perms = permutations(n + 1);
        for pattern in 0..(1u32 << n) {
            let has_answer: Vec<bool> = (0..n).map(|i| pattern & (1 << i) != 0).collect();
            let negatives = has_answer
                .iter()
                .enumerate()
                .map(|(i, &a)| {
                    let id = format!("n{i}");
                    if a {
                        Snippet::span(id, "x", 0, 1)
                    } else {
                        Snippet::no_answer(id)
                    }
                })
                .collect();
            let set = SnippetSet::new("q", Snippet::span("p", "x", 0, 1), negatives);
            for order in &perms {
                let ranking = RankingOutcome {
                    order: order.clone(),
                    ..RankingOutcome::identity(n + 1)
                };
                for mode in RefinementMode::ALL {
                    let got = decide(&set, &ranking, mode, RuleOptions::default()).map_err(|e| e.to_string())?;
                    let actions: Vec<Action> = got.decisions.iter().map(|d| d.action).collect();
                    let want = naive_rules(&has_answer, order, mode);
                    check(actions == want, || {
                        format!("n={n} answers={has_answer:?} order={order:?} {mode}: got {actions:?} want {want:?}")
                    })?;
                    check(got.decisions.iter().all(|d| is_legal(d.action, d.reason)), || "illegal pair".into())?;
                    cases += 1;
                    if n == 4 {
                        at_four += 1;
                    }
                }
            }
        }
    }
    let elapsed = started.elapsed();
    check(at_four == 5760, || format!("{at_four} cases at N=4"))?;
    check(elapsed < RULES_MAX, || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} cases ({at_four} at N=4), 0 mismatches, {elapsed:.2?}"))
}

fn synthetic_end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        queries: 1000,
        negatives_per_query: 10,
        plant_rate: 0.3,
        ..SynthSpec::default()
    };
    let corpus_path = dir.path().join("synthetic.jsonl");
    let plan_path = dir.path().join("plan.jsonl");
    let corpus = negrefine::gateway::synth::generate_synthetic_corpus(&spec, &corpus_path, &plan_path)
        .map_err(|e| e.to_string())?;
    let backend = Arc::new(OracleBackend::new(corpus.plan.clone()).map_err(|e| e.to_string())?);
    let gateway = Gateway::new(
        backend,
        BackendConfig {
            max_parallel_requests: 64,
            ..BackendConfig::default()
        },
    )?;
    let outputs = Outputs::beside(dir.path().join("refined.jsonl"));
    let settings = Settings {
        window: 256,
        ..Settings::default()
    };
    let report = runtime()
        .block_on(run(&RunPlan::refine(&corpus_path, outputs.clone()), &settings, Some(&gateway)))
        .map_err(|e| e.to_string())?;
    let prov = read_provenance(&outputs.provenance).unwrap();

    let key = |i: &str, d: &str| format!("{i}/{d}");
    let gold = |f: fn(&negrefine::gateway::mock::QueryPlan) -> &Vec<String>| -> BTreeSet<String> {
        corpus
            .plan
            .queries
            .iter()
            .flat_map(|q| f(q).iter().map(|d| key(&q.instance_id, d)))
            .collect()
    };
    let chosen = |a: Action| -> BTreeSet<String> {
        prov.iter().filter(|r| r.action == a).map(|r| key(&r.instance_id, &r.doc_id)).collect()
    };
    let (gold_p, gold_f) = (gold(|q| &q.gold_promote), gold(|q| &q.gold_filter));
    let (got_p, got_f) = (chosen(Action::PromoteToPositive), chosen(Action::FilterOut));
    check(got_p == gold_p, || {
        format!("promote: {} extra, {} missed", got_p.difference(&gold_p).count(), gold_p.difference(&got_p).count())
    })?;
    check(got_f == gold_f, || {
        format!("filter: {} extra, {} missed", got_f.difference(&gold_f).count(), gold_f.difference(&got_f).count())
    })?;
    check(report.incomplete() == 0, || format!("{} incomplete", report.incomplete()))?;

    // quota planting: round(Q*N*p) planted, half of them above the anchor
    let n = spec.negatives_per_query as f64;
    let expected_promoted = n * spec.plant_rate * spec.above_anchor_fraction;
    let expected_filtered = n * spec.plant_rate * (1.0 - spec.above_anchor_fraction);
    let expected_retained = n - expected_promoted - expected_filtered;
    let stats = refinement_stats(&prov);
    let o = stats.overall();
    for (name, got, want) in [
        ("promoted", o.relabeled_pos_mean(), expected_promoted),
        ("filtered", o.filtered_neg_mean(), expected_filtered),
        ("retained", o.retained_mean(), expected_retained),
    ] {
        check((got - want).abs() <= MEAN_TOLERANCE, || format!("{name} mean {got} vs {want}"))?;
    }
    let elapsed = started.elapsed();
    check(elapsed < SYNTH_MAX, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "P=R=1 on {} promote / {} filter gold; means {:.2}/{:.2}/{:.2}; {elapsed:.2?}",
        gold_p.len(),
        gold_f.len(),
        o.relabeled_pos_mean(),
        o.filtered_neg_mean(),
        o.retained_mean()
    ))
}

const FUZZ_WORDS: &[&str] = &[
    "alpha", "Beta", "gamma", "δέλτα", "naïve", "cafe\u{301}", "café", "東京", "x", "1942", "June", "22,", "\u{2014}", "the",
    "e\u{301}", "ﬁ", "🙂", "a\u{200b}b", "TAB\t", "Ω", "Å", "A\u{30a}",
];

fn fuzz_doc(rng: &mut ChaCha8Rng) -> Document {
    let n = rng.gen_range(1..40);
    let mut text = String::new();
    for i in 0..n {
        if i > 0 {
            text.push_str(match rng.gen_range(0..6) {
                0 => "  ",
                1 => "\n",
                2 => " \t ",
                3 => "\u{00a0}",
                _ => " ",
            });
        }
        text.push_str(FUZZ_WORDS[rng.gen_range(0..FUZZ_WORDS.len())]);
    }
    let max = rng.gen_range(1..45);
    negrefine::ingest::truncate(&Document::new("d", text), max, negrefine::ingest::TruncationUnit::Words)
}

/// A response an unreliable judge might give for `doc`.
fn adversarial_response(rng: &mut ChaCha8Rng, doc: &Document) -> String {
    let chars: Vec<char> = doc.text.chars().collect();
    let pick = |rng: &mut ChaCha8Rng| {
        let s = rng.gen_range(0..chars.len());
        let e = rng.gen_range(s..=chars.len().min(s + 30));
        chars[s..e].iter().collect::<String>()
    };
    match rng.gen_range(0..9) {
        0 => pick(rng),
        1 => pick(rng).split_whitespace().collect::<Vec<_>>().join(" "),
        2 => format!("  {}\n", pick(rng)),
        3 => pick(rng).to_uppercase(),
        4 => {
            let mut words: Vec<String> = pick(rng).split_whitespace().map(String::from).collect();
            words.reverse();
            words.join(" ")
        }
        5 => format!("The answer is {}", pick(rng)),
        6 => pick(rng).replace(' ', "  "),
        7 => "NO_ANSWER".into(),
        _ => (0..rng.gen_range(0..5)).map(|_| FUZZ_WORDS[rng.gen_range(0..FUZZ_WORDS.len())]).collect::<Vec<_>>().join(" "),
    }
}

fn verbatim_span_guarantee() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let docs: Vec<Document> = (0..SPAN_FUZZ_PAIRS).map(|_| fuzz_doc(&mut rng)).collect();
    let backend = Arc::new(ScriptedBackend::new(|prompt| {
        // seeded by the prompt so the corrective retry gets a fresh answer
        let seed = prompt.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = match parse_stage1_prompt(prompt) {
            Some((_, d)) => d,
            None => prompt.rsplit("#### BEGIN DOCUMENT").next().unwrap_or(prompt).to_string(),
        };
        Ok(adversarial_response(&mut rng, &Document::new("d", doc)))
    }));
    let gateway = Gateway::new(
        backend,
        BackendConfig {
            retry: RetryPolicy::no_delay(0),
            max_parallel_requests: 32,
            ..BackendConfig::default()
        },
    )?;
    let rt = runtime();
    let snippets: Vec<Snippet> = rt.block_on(async {
        let futs = docs.iter().map(|d| extract_snippet("q", d, &gateway, Normalization::default(), "fuzz"));
        futures::future::join_all(futs).await
    })
    .into_iter()
    .collect::<Result<_, _>>()
    .map_err(|e| e.to_string())?;

    let (mut accepted, mut failures) = (0usize, 0usize);
    for (doc, s) in docs.iter().zip(&snippets) {
        if let SnippetContent::AnswerSpan { text, char_start, char_end } = &s.content {
            accepted += 1;
            let exact = char_slice(&doc.truncated_text, *char_start, *char_end) == text;
            let within = *char_end <= doc.truncated_text.chars().count();
            if !(exact && within && !text.is_empty() && doc.truncated_text.contains(text.as_str())) {
                failures += 1;
            }
        }
    }
    check(failures == 0, || format!("{failures} of {accepted} accepted spans fail re-validation"))?;
    check(accepted > SPAN_FUZZ_PAIRS / 10, || format!("only {accepted} spans accepted; fuzz is vacuous"))?;
    Ok(format!("{SPAN_FUZZ_PAIRS} pairs, {accepted} accepted, failure rate 0"))
}

fn mutilate(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut order: Vec<usize> = (1..=n).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut tokens: Vec<String> = order
        .iter()
        .map(|id| if rng.gen_bool(0.5) { format!("[{id}]") } else { id.to_string() })
        .collect();
    for _ in 0..rng.gen_range(1..5) {
        let at = rng.gen_range(0..=tokens.len());
        match rng.gen_range(0..7) {
            0 if !tokens.is_empty() => {
                tokens.remove(at.min(tokens.len() - 1));
            }
            1 => tokens.insert(at, format!("[{}]", rng.gen_range(1..=n))),
            2 => tokens.insert(at, format!("[{}]", rng.gen_range(n + 1..n + 20))),
            3 => tokens.insert(at, "maybe".into()),
            4 => tokens.insert(at, "[x]".into()),
            5 => tokens.insert(at, String::new()),
            _ => tokens.insert(at, format!("{} ", rng.gen_range(0..3))),
        }
    }
    let sep = [" > ", ">", " >> ", " , "][rng.gen_range(0..4)];
    let mut s = tokens.join(sep);
    if rng.gen_bool(0.2) {
        s = format!("Ranking: {s}. Done.");
    }
    s
}

fn ranking_parser_properties() -> Outcome {
    let mut perms_checked = 0;
    for n in 1..=6 {
        for p in permutations(n) {
            let got = parse_ranking(&format_ranking(&p), n).map_err(|e| e.to_string())?;
            check(got == (p.clone(), vec![]), || format!("round trip of {p:?} gave {got:?}"))?;
            perms_checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut unparseable = 0;
    for _ in 0..MUTILATIONS {
        let n = rng.gen_range(1..=11);
        let raw = mutilate(&mut rng, n);
        match parse_ranking(&raw, n) {
            Ok((order, _)) => {
                let mut sorted = order.clone();
                sorted.sort_unstable();
                check(sorted == (1..=n).collect::<Vec<_>>(), || format!("{raw:?} -> {order:?}"))?;
            }
            Err(_) => unparseable += 1,
        }
    }

    // an instance whose judge never returns a parseable ranking
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let record = serde_json::json!({
        "id": "u", "query": "q",
        "pos": [{"id": "p", "text": "answer one"}],
        "neg": [{"id": "a", "text": "answer two"}, {"id": "b", "text": "answer three"}, {"id": "c", "text": "nothing"}],
    });
    std::fs::write(&input, format!("{record}\n")).unwrap();
    let backend = Arc::new(ScriptedBackend::new(|prompt| {
        Ok(match parse_stage1_prompt(prompt) {
            Some((_, doc)) if doc.starts_with("answer") => doc,
            Some(_) => "NO_ANSWER".into(),
            None => "I cannot rank these.".into(),
        })
    }));
    let gateway = Gateway::new(backend, BackendConfig { retry: RetryPolicy::no_delay(0), ..BackendConfig::default() })?;
    let outputs = Outputs::beside(dir.path().join("out.jsonl"));
    runtime()
        .block_on(run(&RunPlan::refine(&input, outputs.clone()), &Settings::default(), Some(&gateway)))
        .map_err(|e| e.to_string())?;
    let prov: Vec<ProvenanceRecord> = read_provenance(&outputs.provenance).unwrap();
    check(prov.len() == 3, || format!("{} provenance rows", prov.len()))?;
    check(
        prov.iter().all(|r| r.action == Action::RetainNegative && r.reason == Reason::InstanceSkipped),
        || format!("{prov:?}"),
    )?;
    Ok(format!(
        "{perms_checked} permutations, {MUTILATIONS} mutilations ({unparseable} unparseable), fallback unrefined"
    ))
}

fn kappa_fixtures() -> Outcome {
    let k = cohen_kappa(&[true, true, false, false], &[true, false, false, false]).map_err(|e| e.to_string())?;
    check((k - 0.5).abs() <= KAPPA_TOLERANCE, || format!("hand case gave {k}"))?;
    let mixed = [true, false, false, true, true];
    check(cohen_kappa(&mixed, &mixed) == Ok(1.0), || "identical vectors".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..KAPPA_SYMMETRY_PAIRS {
        let n = rng.gen_range(1..200);
        let a: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let (ab, ba) = (cohen_kappa(&a, &b).unwrap(), cohen_kappa(&b, &a).unwrap());
        check(ab == ba, || format!("asymmetric: {ab} vs {ba}"))?;
    }
    Ok(format!("hand case {k}, identical 1.0, {KAPPA_SYMMETRY_PAIRS} symmetric pairs"))
}

/// Provenance for 10 queries with N=10 whose per-query counts total 16
/// promoted and 22 filtered.
fn write_summary_fixture(path: &Path) {
    let promoted = [3, 0, 2, 1, 2, 1, 4, 0, 2, 1];
    let filtered = [2, 3, 1, 4, 2, 2, 0, 5, 1, 2];
    assert_eq!(promoted.iter().sum::<usize>(), 16);
    assert_eq!(filtered.iter().sum::<usize>(), 22);
    let mut lines = String::new();
    for q in 0..10 {
        for j in 0..10 {
            let (action, reason) = if j < promoted[q] {
                (Action::PromoteToPositive, Reason::RankedAboveAnchor)
            } else if j < promoted[q] + filtered[q] {
                (Action::FilterOut, Reason::SnippetBelowAnchor)
            } else {
                (Action::RetainNegative, Reason::NoAnswer)
            };
            let row = ProvenanceRecord {
                instance_id: q.to_string(),
                dataset: "msmarco".into(),
                judge: "Qwen3-32B".into(),
                doc_id: format!("q{q}-neg{j}"),
                action,
                reason,
                rank: Some(j + 1),
                snippet: None,
                flags: vec![],
            };
            lines.push_str(&serde_json::to_string(&row).unwrap());
            lines.push('\n');
        }
    }
    std::fs::write(path, lines).unwrap();
}

fn summary_table_replay() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("summary.provenance.jsonl");
    let json = dir.path().join("stats.jsonl");
    write_summary_fixture(&fixture);
    let o = run_bin(&["stats", "--provenance", path_str(&fixture), "--json", path_str(&json)]);
    check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let table = String::from_utf8_lossy(&o.stdout);
    let records: Vec<StatsRecord> = std::fs::read_to_string(&json)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let overall = records.iter().find(|r| r.scope == "overall").ok_or("no overall record")?;
    check(overall.relabeled_pos_mean == 1.6, || format!("relabeled {}", overall.relabeled_pos_mean))?;
    check(overall.filtered_neg_mean == 2.2, || format!("filtered {}", overall.filtered_neg_mean))?;
    check(overall.n_queries == 10, || format!("{} queries", overall.n_queries))?;
    let row = table.lines().find(|l| l.contains("overall")).ok_or("no overall row")?;
    let cells: Vec<&str> = row.split_whitespace().collect();
    check(cells[2..7] == ["10", "1.6", "2.2", "6.2", "10"], || format!("table row {row:?}"))?;
    Ok("overall row N=10, 1.6 / 2.2".into())
}

fn determinism_and_resume() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        queries: 200,
        seed: 11,
        ..SynthSpec::default()
    };
    let corpus = dir.path().join("c.jsonl");
    let plan = dir.path().join("p.jsonl");
    generate(&spec).unwrap().write(&corpus, &plan).unwrap();
    let again = dir.path().join("c2.jsonl");
    let plan2 = dir.path().join("p2.jsonl");
    generate(&spec).unwrap().write(&again, &plan2).unwrap();
    check(std::fs::read(&corpus).unwrap() == std::fs::read(&again).unwrap(), || "synthetic corpus differs".into())?;

    let refine = |out: &Path, extra: &[&str]| {
        let mut args = vec!["refine", "--oracle-plan", path_str(&plan), "--in", path_str(&corpus), "--out", path_str(out)];
        args.extend_from_slice(extra);
        args.iter().map(|s| s.to_string()).collect::<Vec<_>>()
    };
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = std::process::Command::new(BIN).args(refine(out, &[])).output().unwrap();
        check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    let (pa, pb) = (Outputs::beside(&a).provenance, Outputs::beside(&b).provenance);
    check(bytes(&a) == bytes(&b) && bytes(&pa) == bytes(&pb), || "two identical runs differ".into())?;

    let k = dir.path().join("k.jsonl");
    let (d1, d2) = (dir.path().join("k1.jsonl"), dir.path().join("k2.jsonl"));
    let dumps = ["--stage1-dump", path_str(&d1), "--stage2-dump", path_str(&d2)];
    let mut slow = refine(&k, &dumps);
    slow.extend(["--oracle-delay-ms".into(), "20".into()]);
    let mut child = std::process::Command::new(BIN)
        .args(&slow)
        .stdout(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let lines = std::fs::read_to_string(&d2).map(|s| s.lines().count()).unwrap_or(0);
        if lines >= 10 || Instant::now() > deadline {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    let status = child.wait().unwrap();
    check(!status.success(), || "run finished before it could be killed".into())?;
    check(negrefine::ingest::partial_marker(&k).exists(), || "no partial marker after kill".into())?;

    let mut resume = refine(&k, &dumps);
    resume.push("--resume".into());
    let o = std::process::Command::new(BIN).args(&resume).output().unwrap();
    check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let stdout = String::from_utf8_lossy(&o.stdout);
    let replayed = stdout.lines().find(|l| l.starts_with("replayed")).unwrap_or("").to_string();
    let counts: Vec<usize> = replayed.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    check(counts.len() == 2 && counts.iter().all(|&c| c > 0), || format!("resume replay counts: {stdout}"))?;
    let pk = Outputs::beside(&k).provenance;
    check(bytes(&k) == bytes(&a) && bytes(&pk) == bytes(&pa), || "resumed output differs".into())?;
    check(!negrefine::ingest::partial_marker(&k).exists(), || "partial marker left after resume".into())?;
    Ok(format!("2 runs identical; kill + resume identical ({replayed})"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("worked example B>A>C>D in r+f, relabel and filter modes", pledge_worked_example),
        ("rule engine matches naive oracle exhaustively for N<=4", rule_engine_oracle),
        ("synthetic 1000x10 corpus: gold precision/recall and means", synthetic_end_to_end),
        ("accepted spans are verbatim substrings of the truncated document", verbatim_span_guarantee),
        ("ranking parser round trip, repair validity, unparseable fallback", ranking_parser_properties),
        ("kappa fixtures and symmetry", kappa_fixtures),
        ("stats replay of a 1.6 / 2.2 provenance fixture", summary_table_replay),
        ("determinism and kill-and-resume byte identity", determinism_and_resume),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
