//! Domain types shared by every pipeline stage.
//!
//! Everything here is plain data. Values are immutable once built and can be
//! sent freely between workers.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Literal sentinel emitted by the extractor when a document holds no answer.
pub const NO_ANSWER: &str = "NO_ANSWER";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("missing-positive: instance {0} has no positive document")]
    MissingPositive(String),
    #[error("duplicate-doc-id: {doc_id} appears twice in instance {instance_id}")]
    DuplicateDocId { instance_id: String, doc_id: String },
}

/// One candidate passage.
///
/// `truncated_text` is what the LLM sees; `text` is what gets written back to
/// the refined corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub truncated_text: String,
    pub truncation_applied: bool,
    /// The id was synthesized by the reader rather than read from the record.
    #[serde(default)]
    pub synthetic_id: bool,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            doc_id: doc_id.into(),
            truncated_text: text.clone(),
            text,
            truncation_applied: false,
            synthetic_id: false,
        }
    }

    pub fn with_synthetic_id(mut self) -> Self {
        self.synthetic_id = true;
        self
    }
}

/// A query together with its positive set and mined hard negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub instance_id: String,
    pub query: String,
    pub positives: Vec<Document>,
    pub negatives: Vec<Document>,
    pub source_dataset: String,
    /// Record fields other than query/positives/negatives, written back untouched.
    #[serde(default)]
    pub extra: Map<String, Value>,
}

impl TrainingInstance {
    pub fn new(
        instance_id: impl Into<String>,
        query: impl Into<String>,
        positives: Vec<Document>,
        negatives: Vec<Document>,
    ) -> Result<Self, ModelError> {
        let instance = Self {
            instance_id: instance_id.into(),
            query: query.into(),
            positives,
            negatives,
            source_dataset: String::new(),
            extra: Map::new(),
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn with_dataset(mut self, dataset: impl Into<String>) -> Self {
        self.source_dataset = dataset.into();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.positives.is_empty() {
            return Err(ModelError::MissingPositive(self.instance_id.clone()));
        }
        let mut seen = HashSet::new();
        for doc in self.positives.iter().chain(&self.negatives) {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(ModelError::DuplicateDocId {
                    instance_id: self.instance_id.clone(),
                    doc_id: doc.doc_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// All candidate documents: positives first, then negatives, input order kept.
    pub fn candidate_set(&self) -> Vec<&Document> {
        self.positives.iter().chain(&self.negatives).collect()
    }

    /// The positive whose snippet anchors the ranking. Extra positives never
    /// enter Stage 1 or Stage 2.
    pub fn anchor(&self) -> &Document {
        &self.positives[0]
    }

    /// Anchor followed by negatives; the documents that get snippets and ranks.
    pub fn ranked_candidates(&self) -> Vec<&Document> {
        std::iter::once(self.anchor()).chain(&self.negatives).collect()
    }

    pub fn is_multi_positive(&self) -> bool {
        self.positives.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnippetContent {
    /// Offsets are char indices into the document's `truncated_text`.
    AnswerSpan {
        text: String,
        char_start: usize,
        char_end: usize,
    },
    NoAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub content: SnippetContent,
    /// LLM calls consumed to produce this snippet.
    pub attempts: u8,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl Snippet {
    pub fn no_answer(doc_id: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            content: SnippetContent::NoAnswer,
            attempts: 0,
            flags: Vec::new(),
        }
    }

    pub fn span(doc_id: impl Into<String>, text: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            content: SnippetContent::AnswerSpan {
                text: text.into(),
                char_start: start,
                char_end: end,
            },
            attempts: 0,
            flags: Vec::new(),
        }
    }

    pub fn is_no_answer(&self) -> bool {
        matches!(self.content, SnippetContent::NoAnswer)
    }

    /// Span text, or `None` for the sentinel.
    pub fn text(&self) -> Option<&str> {
        match &self.content {
            SnippetContent::AnswerSpan { text, .. } => Some(text),
            SnippetContent::NoAnswer => None,
        }
    }

    /// Text used in provenance and prompts: the span or the literal sentinel.
    pub fn display_text(&self) -> &str {
        self.text().unwrap_or(NO_ANSWER)
    }
}

/// Snippets of one instance keyed by 1-based id. Id 1 is always the anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetSet {
    pub query: String,
    entries: Vec<Snippet>,
}

impl SnippetSet {
    pub const ANCHOR_ID: usize = 1;

    pub fn new(query: impl Into<String>, anchor: Snippet, negatives: Vec<Snippet>) -> Self {
        let mut entries = Vec::with_capacity(negatives.len() + 1);
        entries.push(anchor);
        entries.extend(negatives);
        Self {
            query: query.into(),
            entries,
        }
    }

    pub fn anchor_id(&self) -> usize {
        Self::ANCHOR_ID
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Snippet> {
        id.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn anchor(&self) -> &Snippet {
        &self.entries[0]
    }

    /// `(id, snippet)` in id order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &Snippet)> {
        self.entries.iter().enumerate().map(|(i, s)| (i + 1, s))
    }

    /// Negative snippets with their ids (2..=N+1).
    pub fn negatives(&self) -> impl Iterator<Item = (usize, &Snippet)> {
        self.entries().skip(1)
    }

    pub fn ids(&self) -> Vec<usize> {
        (1..=self.entries.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "kebab-case")]
pub enum Repair {
    DuplicateDropped(usize),
    MissingAppended(usize),
    UnknownDropped(String),
    UnrecognizedSegment(String),
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repair::DuplicateDropped(id) => write!(f, "duplicate-dropped:{id}"),
            Repair::MissingAppended(id) => write!(f, "missing-appended:{id}"),
            Repair::UnknownDropped(tok) => write!(f, "unknown-dropped:{tok}"),
            Repair::UnrecognizedSegment(seg) => write!(f, "unrecognized-segment:{seg}"),
        }
    }
}

/// A strict total order over snippet ids, most answerable first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingOutcome {
    pub order: Vec<usize>,
    #[serde(default)]
    pub repairs: Vec<Repair>,
    #[serde(default)]
    pub raw_response: String,
    /// The order is the input order because no response could be parsed.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("snippet id {0} is not part of the ranking")]
pub struct UnknownSnippetId(pub usize);

impl RankingOutcome {
    pub fn identity(len: usize) -> Self {
        Self {
            order: (1..=len).collect(),
            repairs: Vec::new(),
            raw_response: String::new(),
            fallback: false,
        }
    }

    /// 1-based position of `snippet_id`; smaller means more answerable.
    pub fn rank_of(&self, snippet_id: usize) -> Result<usize, UnknownSnippetId> {
        self.order
            .iter()
            .position(|&id| id == snippet_id)
            .map(|p| p + 1)
            .ok_or(UnknownSnippetId(snippet_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RefinementMode {
    #[serde(rename = "filter")]
    Filter,
    #[serde(rename = "relabel")]
    Relabel,
    #[serde(rename = "r+f")]
    RelabelAndFilter,
}

impl RefinementMode {
    pub const ALL: [RefinementMode; 3] = [Self::Filter, Self::Relabel, Self::RelabelAndFilter];

    pub fn promotes(self) -> bool {
        matches!(self, Self::Relabel | Self::RelabelAndFilter)
    }

    pub fn filters(self) -> bool {
        matches!(self, Self::Filter | Self::RelabelAndFilter)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Filter => "filter",
            Self::Relabel => "relabel",
            Self::RelabelAndFilter => "r+f",
        }
    }
}

impl fmt::Display for RefinementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RefinementMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "filter" => Ok(Self::Filter),
            "relabel" => Ok(Self::Relabel),
            "r+f" | "rf" | "relabel-and-filter" | "relabel+filter" => Ok(Self::RelabelAndFilter),
            other => Err(format!("unknown refinement mode `{other}` (expected filter, relabel or r+f)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    PromoteToPositive,
    FilterOut,
    RetainNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    RankedAboveAnchor,
    SnippetBelowAnchor,
    NoAnswer,
    ModeSuppressed,
    InstanceSkipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementDecision {
    pub doc_id: String,
    pub action: Action,
    pub reason: Reason,
    pub rank: Option<usize>,
}

/// Anomaly tags attached to instances and snippets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    MultiPositive,
    PositiveNoAnswer,
    RankingRepaired,
    RankingUnparseable,
    NoanswerAboveAnchor,
    NoNegativesRemaining,
    SpanValidationFailed,
    EmptyDocument,
    Stage1Incomplete,
    Stage2Incomplete,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::MultiPositive => "multi-positive",
            Flag::PositiveNoAnswer => "positive-no-answer",
            Flag::RankingRepaired => "ranking-repaired",
            Flag::RankingUnparseable => "ranking-unparseable",
            Flag::NoanswerAboveAnchor => "noanswer-above-anchor",
            Flag::NoNegativesRemaining => "no-negatives-remaining",
            Flag::SpanValidationFailed => "span-validation-failed",
            Flag::EmptyDocument => "empty-document",
            Flag::Stage1Incomplete => "stage1-incomplete",
            Flag::Stage2Incomplete => "stage2-incomplete",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output of label reconstruction for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedInstance {
    pub instance_id: String,
    pub query: String,
    pub source_dataset: String,
    pub new_positives: Vec<Document>,
    pub new_negatives: Vec<Document>,
    /// One per input negative, in input order.
    pub decisions: Vec<RefinementDecision>,
    pub mode: RefinementMode,
    pub flags: Vec<Flag>,
    #[serde(default)]
    pub extra: Map<String, Value>,
}

impl RefinedInstance {
    pub fn count(&self, action: Action) -> usize {
        self.decisions.iter().filter(|d| d.action == action).count()
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Pushes `flag` unless already present.
pub(crate) fn add_flag(flags: &mut Vec<Flag>, flag: Flag) {
    if !flags.contains(&flag) {
        flags.push(flag);
    }
}
