//! Deterministic backends for tests and offline runs.
//!
//! [`OracleBackend`] answers Stage 1 and Stage 2 prompts from an
//! [`OraclePlan`]: a planted span per answer-bearing document and a
//! directness score that induces the Stage 2 order. Responses depend only on
//! the prompt content and the plan.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::prompt::{format_ranking, parse_stage1_prompt, parse_stage2_prompt, RankingMode};
use super::{Backend, BackendError, ChatRequest};
use crate::model::NO_ANSWER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocPlan {
    pub doc_id: String,
    /// Verbatim text planted in the document, if it bears an answer.
    pub span: Option<String>,
    /// Higher is a more direct answer. Only meaningful with a span.
    pub directness: Option<f64>,
}

/// Plan for one query. `gold_promote` / `gold_filter` list the negatives a
/// correct refinement promotes or filters; every other negative is retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub instance_id: String,
    pub query: String,
    pub docs: Vec<DocPlan>,
    pub gold_promote: Vec<String>,
    pub gold_filter: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("query `{0}`: planted directness scores are not distinct")]
    TiedScores(String),
    #[error("query `{query}`: gold label {doc_id} has no planted span")]
    GoldWithoutSpan { query: String, doc_id: String },
    #[error("query `{0}` appears twice in the plan")]
    DuplicateQuery(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OraclePlan {
    pub queries: Vec<QueryPlan>,
}

impl OraclePlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        let mut seen = std::collections::HashSet::new();
        for q in &self.queries {
            if !seen.insert(q.query.as_str()) {
                return Err(PlanError::DuplicateQuery(q.query.clone()));
            }
            let mut scores: Vec<f64> = q.docs.iter().filter(|d| d.span.is_some()).filter_map(|d| d.directness).collect();
            scores.sort_by(|a, b| a.total_cmp(b));
            if scores.windows(2).any(|w| w[0] == w[1]) {
                return Err(PlanError::TiedScores(q.query.clone()));
            }
            for gold in q.gold_promote.iter().chain(&q.gold_filter) {
                let has_span = q.docs.iter().any(|d| &d.doc_id == gold && d.span.is_some());
                if !has_span {
                    return Err(PlanError::GoldWithoutSpan {
                        query: q.query.clone(),
                        doc_id: gold.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// One [`QueryPlan`] per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for q in &self.queries {
            serde_json::to_writer(&mut out, q)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self {
            queries: crate::ingest::read_jsonl(path)?,
        })
    }
}

#[derive(Debug, Default)]
struct Concurrency {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: AtomicUsize,
}

impl Concurrency {
    fn enter(&self) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
    }

    fn exit(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

pub struct OracleBackend {
    plans: Vec<QueryPlan>,
    by_query: HashMap<String, usize>,
    delay: Option<Duration>,
    counters: Concurrency,
}

impl OracleBackend {
    pub fn new(plan: OraclePlan) -> Result<Self, PlanError> {
        plan.validate()?;
        let by_query = plan.queries.iter().enumerate().map(|(i, q)| (q.query.clone(), i)).collect();
        Ok(Self {
            plans: plan.queries,
            by_query,
            delay: None,
            counters: Concurrency::default(),
        })
    }

    /// Holds each request open for `delay`, making concurrency observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> usize {
        self.counters.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.counters.max_in_flight.load(Ordering::SeqCst)
    }

    fn plan(&self, query: &str) -> Option<&QueryPlan> {
        self.by_query.get(query).map(|&i| &self.plans[i])
    }

    /// The planted span found in `document`, or `NO_ANSWER`.
    pub fn answer_stage1(&self, query: &str, document: &str) -> String {
        self.plan(query)
            .and_then(|p| {
                p.docs
                    .iter()
                    .filter_map(|d| d.span.as_deref())
                    .find(|span| document.contains(span))
            })
            .unwrap_or(NO_ANSWER)
            .to_string()
    }

    /// Ids ordered by descending directness; candidates without a known
    /// span follow in ascending id order.
    pub fn answer_stage2(&self, query: &str, mode: RankingMode, entries: &[Option<String>]) -> String {
        let plan = self.plan(query);
        let score = |entry: &Option<String>| -> Option<f64> {
            let text = entry.as_deref()?;
            let doc = plan?.docs.iter().find(|d| match (&d.span, mode) {
                (Some(span), RankingMode::SnippetCentric) => span == text,
                (Some(span), RankingMode::PassageCentric) => text.contains(span.as_str()),
                (None, _) => false,
            })?;
            doc.directness
        };
        let mut scored: Vec<(usize, Option<f64>)> =
            entries.iter().enumerate().map(|(i, e)| (i + 1, score(e))).collect();
        scored.sort_by(|(ia, sa), (ib, sb)| match (sa, sb) {
            (Some(a), Some(b)) => b.total_cmp(a).then(ia.cmp(ib)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => ia.cmp(ib),
        });
        format_ranking(&scored.into_iter().map(|(id, _)| id).collect::<Vec<_>>())
    }

    fn respond(&self, prompt: &str) -> String {
        if let Some(parsed) = parse_stage2_prompt(prompt) {
            return self.answer_stage2(&parsed.query, parsed.mode, &parsed.entries);
        }
        if let Some((query, doc)) = parse_stage1_prompt(prompt) {
            return self.answer_stage1(&query, &doc);
        }
        "I could not understand the request.".to_string()
    }
}

#[async_trait]
impl Backend for OracleBackend {
    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.counters.enter();
        if let Some(delay) = self.delay {
            tokio::time::sleep(delay).await;
        }
        let out = self.respond(&request.prompt);
        self.counters.exit();
        Ok(out)
    }
}

type Script = dyn Fn(&str) -> Result<String, BackendError> + Send + Sync;

/// Backend driven by a closure over the prompt; used for fault injection and
/// malformed-response scenarios.
pub struct ScriptedBackend {
    script: Arc<Script>,
    delay: Option<Duration>,
    counters: Concurrency,
}

impl ScriptedBackend {
    pub fn new(script: impl Fn(&str) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self {
            script: Arc::new(script),
            delay: None,
            counters: Concurrency::default(),
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> usize {
        self.counters.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.counters.max_in_flight.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.counters.enter();
        if let Some(delay) = self.delay {
            tokio::time::sleep(delay).await;
        }
        let out = (self.script)(&request.prompt);
        self.counters.exit();
        out
    }
}
