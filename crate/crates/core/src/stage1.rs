//! Stage 1: per-document answer-snippet extraction with verbatim validation.

use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

use crate::gateway::prompt::{build_stage1_prompt, corrective_prompt};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{add_flag, Document, Flag, Snippet, SnippetContent, SnippetSet, TrainingInstance, NO_ANSWER};

/// How candidate spans are compared against document text. Matching is
/// always case-sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub nfc: bool,
    pub collapse_whitespace: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            nfc: true,
            collapse_whitespace: true,
        }
    }
}

impl Normalization {
    pub fn apply(&self, text: &str) -> String {
        normalize_with_map(text, *self).0
    }
}

/// Normalized text plus, for each normalized char, the char range of the
/// source grapheme cluster (or whitespace run) it came from.
fn normalize_with_map(text: &str, norm: Normalization) -> (String, Vec<(usize, usize)>) {
    let mut out = String::with_capacity(text.len());
    let mut map = Vec::with_capacity(text.len());
    let mut char_pos = 0usize;
    let mut ws_run: Option<usize> = None;

    for cluster in text.graphemes(true) {
        let n_chars = cluster.chars().count();
        let is_ws = norm.collapse_whitespace && cluster.chars().all(char::is_whitespace);
        if is_ws {
            match ws_run {
                Some(start) => {
                    // extend the single space emitted for this run
                    if let Some(last) = map.last_mut() {
                        *last = (start, char_pos + n_chars);
                    }
                }
                None => {
                    ws_run = Some(char_pos);
                    out.push(' ');
                    map.push((char_pos, char_pos + n_chars));
                }
            }
        } else {
            ws_run = None;
            let range = (char_pos, char_pos + n_chars);
            if norm.nfc {
                for c in cluster.nfc() {
                    out.push(c);
                    map.push(range);
                }
            } else {
                for c in cluster.chars() {
                    out.push(c);
                    map.push(range);
                }
            }
        }
        char_pos += n_chars;
    }
    (out, map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "kebab-case")]
pub enum SpanRejection {
    #[error("not-found")]
    NotFound,
    #[error("found-only-beyond-truncation")]
    FoundOnlyBeyondTruncation,
    #[error("empty-candidate")]
    EmptyCandidate,
}

/// A validated span: char offsets into the unnormalized `truncated_text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocatedSpan {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

/// Substring of `text` between char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let b = indices.nth(start).unwrap_or(text.len());
    let e = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b
    };
    &text[b..e]
}

fn find_in(haystack: &str, needle_norm: &str, norm: Normalization) -> Option<(usize, usize)> {
    let (normalized, map) = normalize_with_map(haystack, norm);
    let needle_chars = needle_norm.chars().count();
    let mut from = 0;
    while let Some(rel) = normalized[from..].find(needle_norm) {
        let byte_start = from + rel;
        let start_idx = normalized[..byte_start].chars().count();
        let end_idx = start_idx + needle_chars;
        let (s, _) = map[start_idx];
        let (_, e) = map[end_idx - 1];
        // a match that is not aligned to source clusters does not round-trip
        if norm.apply(char_slice(haystack, s, e)) == needle_norm {
            return Some((s, e));
        }
        from = byte_start + normalized[byte_start..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Locates the first occurrence of `candidate` in `doc.truncated_text`.
pub fn validate_span(candidate: &str, doc: &Document, norm: Normalization) -> Result<LocatedSpan, SpanRejection> {
    let needle = norm.apply(candidate.trim());
    if needle.is_empty() {
        return Err(SpanRejection::EmptyCandidate);
    }
    if let Some((s, e)) = find_in(&doc.truncated_text, &needle, norm) {
        return Ok(LocatedSpan {
            text: char_slice(&doc.truncated_text, s, e).to_string(),
            char_start: s,
            char_end: e,
        });
    }
    if doc.truncation_applied && find_in(&doc.text, &needle, norm).is_some() {
        return Err(SpanRejection::FoundOnlyBeyondTruncation);
    }
    Err(SpanRejection::NotFound)
}

/// Whether a trimmed response is the sentinel (case-insensitive, nothing else).
pub fn is_no_answer(response: &str) -> bool {
    response.trim().eq_ignore_ascii_case(NO_ANSWER)
}

/// Runs one extraction with a single corrective retry. Gateway errors are
/// the only failure mode; unusable responses become `NoAnswer` with the
/// `span-validation-failed` flag.
pub async fn extract_snippet(
    query: &str,
    doc: &Document,
    gateway: &Gateway,
    norm: Normalization,
    instance_id: &str,
) -> Result<Snippet, GatewayError> {
    if doc.truncated_text.trim().is_empty() {
        let mut s = Snippet::no_answer(doc.doc_id.clone());
        s.flags.push(Flag::EmptyDocument);
        return Ok(s);
    }
    let prompt = build_stage1_prompt(query, &doc.truncated_text);
    let mut current = prompt.clone();
    let mut attempts = 0u8;
    loop {
        attempts += 1;
        let response = gateway.complete(&current, instance_id).await?;
        if is_no_answer(&response) {
            return Ok(Snippet {
                attempts,
                ..Snippet::no_answer(doc.doc_id.clone())
            });
        }
        let complaint = match validate_span(&response, doc, norm) {
            Ok(span) => {
                return Ok(Snippet {
                    doc_id: doc.doc_id.clone(),
                    content: SnippetContent::AnswerSpan {
                        text: span.text,
                        char_start: span.char_start,
                        char_end: span.char_end,
                    },
                    attempts,
                    flags: Vec::new(),
                })
            }
            Err(rejection) => rejection,
        };
        if attempts >= 2 {
            tracing::debug!(instance_id, doc_id = %doc.doc_id, %complaint, "span rejected after corrective retry");
            let mut s = Snippet::no_answer(doc.doc_id.clone());
            s.attempts = attempts;
            s.flags.push(Flag::SpanValidationFailed);
            return Ok(s);
        }
        let reason = match complaint {
            SpanRejection::FoundOnlyBeyondTruncation | SpanRejection::NotFound => {
                "the text is not an exact contiguous span of the document shown. Copy the span verbatim from the document, or output NO_ANSWER."
            }
            SpanRejection::EmptyCandidate => "the output was empty. Output a verbatim span or NO_ANSWER.",
        };
        current = corrective_prompt(&prompt, &response, reason);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    pub snippets: SnippetSet,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage1-incomplete for instance {instance_id}: {source}")]
pub struct Stage1Error {
    pub instance_id: String,
    #[source]
    pub source: GatewayError,
}

/// Extracts snippets for the anchor and every negative concurrently.
/// Snippet id 1 is the anchor; negatives follow in input order.
pub async fn run_stage1(
    instance: &TrainingInstance,
    gateway: &Gateway,
    norm: Normalization,
) -> Result<Stage1Output, Stage1Error> {
    let candidates = instance.ranked_candidates();
    let futures = candidates
        .iter()
        .map(|doc| extract_snippet(&instance.query, doc, gateway, norm, &instance.instance_id));
    let mut snippets = try_join_all(futures).await.map_err(|source| Stage1Error {
        instance_id: instance.instance_id.clone(),
        source,
    })?;
    let anchor = snippets.remove(0);
    let set = SnippetSet::new(instance.query.clone(), anchor, snippets);
    Ok(Stage1Output {
        flags: instance_flags(instance, &set),
        snippets: set,
    })
}

/// Flags derivable from an instance and its snippets alone.
pub fn instance_flags(instance: &TrainingInstance, snippets: &SnippetSet) -> Vec<Flag> {
    let mut flags = Vec::new();
    if instance.is_multi_positive() {
        add_flag(&mut flags, Flag::MultiPositive);
    }
    if snippets.anchor().is_no_answer() {
        add_flag(&mut flags, Flag::PositiveNoAnswer);
    }
    flags
}
