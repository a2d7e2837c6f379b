//! Seeded synthetic corpora with planted answers and gold refinement labels.
//!
//! Every query has one positive (always answer-bearing, directness 0.5) and
//! `negatives_per_query` negatives. Planting uses corpus-level quotas: exactly
//! `round(Q * N * plant_rate)` negatives carry a span, and exactly
//! `round(planted * above_anchor_fraction)` of those outrank the positive.
//! Per-query means of the gold labels are therefore exact, not just equal in
//! expectation.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mock::{DocPlan, OraclePlan, QueryPlan};
use crate::ingest::{instance_record, TripletSchema};
use crate::model::{Document, TrainingInstance};

const VOCAB: &[&str] = &[
    "river", "stone", "market", "engine", "harbor", "lantern", "meadow", "copper", "signal", "garden",
    "forest", "ledger", "violin", "canyon", "orbit", "pepper", "marble", "tunnel", "saddle", "winter",
    "basket", "falcon", "glacier", "timber", "anchor", "mirror", "pottery", "velvet", "island", "compass",
    "thunder", "cabinet", "harvest", "quartz", "bridge", "candle", "desert", "feather", "gravel", "helmet",
    "jungle", "kettle", "ladder", "magnet", "needle", "oyster", "pillow", "quiver", "rocket", "shovel",
    "throne", "umbrella", "valley", "walnut", "yogurt", "zipper", "acorn", "barrel", "cactus", "dolphin",
    "eagle", "fossil", "goblet", "hammock", "igloo", "jacket", "kiosk", "lemon", "mosaic", "nectar",
    "olive", "parade", "quarry", "ribbon", "sailor", "tablet", "urchin", "voyage", "wagon", "yarn",
    "the", "of", "and", "near", "with", "under", "beyond", "across", "during", "without",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub queries: usize,
    pub negatives_per_query: usize,
    pub plant_rate: f64,
    pub above_anchor_fraction: f64,
    pub words_per_doc: usize,
    pub seed: u64,
    pub dataset: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            queries: 100,
            negatives_per_query: 10,
            plant_rate: 0.3,
            above_anchor_fraction: 0.5,
            words_per_doc: 60,
            seed: 7,
            dataset: "synthetic".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("{name} must be within [0, 1], got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub instances: Vec<TrainingInstance>,
    pub plan: OraclePlan,
}

impl SyntheticCorpus {
    pub fn gold_promote_total(&self) -> usize {
        self.plan.queries.iter().map(|q| q.gold_promote.len()).sum()
    }

    pub fn gold_filter_total(&self) -> usize {
        self.plan.queries.iter().map(|q| q.gold_filter.len()).sum()
    }

    /// Writes the corpus in the default triplet schema and the plan as JSONL.
    pub fn write(&self, corpus_path: impl AsRef<Path>, plan_path: impl AsRef<Path>) -> io::Result<()> {
        let schema = TripletSchema::default();
        let mut out = BufWriter::new(File::create(corpus_path)?);
        for inst in &self.instances {
            let record = instance_record(&inst.query, &inst.positives, &inst.negatives, &inst.extra, &schema);
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        self.plan.write_jsonl(plan_path)
    }
}

fn filler(rng: &mut ChaCha8Rng, words: usize) -> Vec<String> {
    (0..words).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string()).collect()
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// A document of `total_words` filler words with `span` inserted so that it
/// starts at word index `at` (0-based).
pub fn document_with_span_at(rng: &mut ChaCha8Rng, span: &str, at: usize, total_words: usize) -> String {
    let mut words = filler(rng, total_words.max(at));
    words.insert(at.min(words.len()), span.to_string());
    words.join(" ")
}

fn answer_span(rng: &mut ChaCha8Rng, query_idx: usize, doc_idx: usize) -> String {
    let a = capitalize(VOCAB[rng.gen_range(0..80)]);
    let b = VOCAB[rng.gen_range(0..80)];
    format!("{a} {b} code is zq{query_idx}x{doc_idx}.")
}

fn distinct_score(rng: &mut ChaCha8Rng, low: f64, high: f64, taken: &[f64]) -> f64 {
    loop {
        let s = rng.gen_range(low..high);
        if s > low && !taken.contains(&s) {
            return s;
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SyntheticCorpus, SynthError> {
    for (name, value) in [("plant_rate", spec.plant_rate), ("above_anchor_fraction", spec.above_anchor_fraction)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(SynthError::InvalidRate { name, value });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.negatives_per_query;
    let slots = spec.queries * n;
    let planted_count = ((slots as f64) * spec.plant_rate).round() as usize;
    let above_count = ((planted_count as f64) * spec.above_anchor_fraction).round() as usize;

    // 0 = no span, 1 = below anchor, 2 = above anchor
    let mut slot_kind = vec![0u8; slots];
    let planted = index::sample(&mut rng, slots, planted_count).into_vec();
    for &s in &planted {
        slot_kind[s] = 1;
    }
    for i in index::sample(&mut rng, planted_count, above_count) {
        slot_kind[planted[i]] = 2;
    }

    let span_position = |rng: &mut ChaCha8Rng| rng.gen_range(0..=spec.words_per_doc);
    let mut instances = Vec::with_capacity(spec.queries);
    let mut plans = Vec::with_capacity(spec.queries);
    for qi in 0..spec.queries {
        let instance_id = qi.to_string();
        let query = format!(
            "what is the {} {} code of item {qi}",
            VOCAB[rng.gen_range(0..80)],
            VOCAB[rng.gen_range(0..80)]
        );

        let pos_span = answer_span(&mut rng, qi, 0);
        let at = span_position(&mut rng);
        let pos_text = document_with_span_at(&mut rng, &pos_span, at, spec.words_per_doc);
        let positive = Document::new(format!("q{qi}-pos"), pos_text);
        let mut docs = vec![DocPlan {
            doc_id: positive.doc_id.clone(),
            span: Some(pos_span),
            directness: Some(0.5),
        }];
        let mut taken = vec![0.5];
        let mut negatives = Vec::with_capacity(n);
        let (mut gold_promote, mut gold_filter) = (Vec::new(), Vec::new());

        for j in 0..n {
            let doc_id = format!("q{qi}-neg{j}");
            let kind = slot_kind[qi * n + j];
            let (text, plan) = if kind == 0 {
                let text = filler(&mut rng, spec.words_per_doc).join(" ");
                (text, DocPlan { doc_id: doc_id.clone(), span: None, directness: None })
            } else {
                let span = answer_span(&mut rng, qi, j + 1);
                let score = if kind == 2 {
                    distinct_score(&mut rng, 0.5, 1.0, &taken)
                } else {
                    distinct_score(&mut rng, 0.05, 0.5, &taken)
                };
                taken.push(score);
                if kind == 2 {
                    gold_promote.push(doc_id.clone());
                } else {
                    gold_filter.push(doc_id.clone());
                }
                let at = span_position(&mut rng);
                let text = document_with_span_at(&mut rng, &span, at, spec.words_per_doc);
                (text, DocPlan { doc_id: doc_id.clone(), span: Some(span), directness: Some(score) })
            };
            negatives.push(Document::new(doc_id, text));
            docs.push(plan);
        }

        let mut instance = TrainingInstance::new(instance_id.clone(), query.clone(), vec![positive], negatives)
            .expect("generated ids are distinct")
            .with_dataset(spec.dataset.clone());
        instance.extra.insert("id".into(), instance_id.clone().into());
        instance.extra.insert("source".into(), spec.dataset.clone().into());
        instances.push(instance);
        plans.push(QueryPlan {
            instance_id,
            query,
            docs,
            gold_promote,
            gold_filter,
        });
    }

    let plan = OraclePlan { queries: plans };
    debug_assert!(plan.validate().is_ok());
    Ok(SyntheticCorpus { instances, plan })
}

/// Generates and writes `(corpus, plan)` files.
pub fn generate_synthetic_corpus(
    spec: &SynthSpec,
    corpus_path: impl AsRef<Path>,
    plan_path: impl AsRef<Path>,
) -> Result<SyntheticCorpus, SynthError> {
    let corpus = generate(spec)?;
    corpus.write(corpus_path, plan_path)?;
    Ok(corpus)
}
