//! Stage 2: listwise ranking of snippets (or passages) and parsing of the
//! returned order.

use std::collections::HashSet;

use crate::gateway::prompt::{build_stage2_prompt, corrective_prompt, EntryText, RankingMode};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{add_flag, Flag, RankingOutcome, Repair, SnippetSet, TrainingInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("unparseable: no snippet id token found")]
pub struct Unparseable;

fn parse_id_token(segment: &str) -> Option<&str> {
    let s = segment.trim();
    let inner = match s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        Some(inner) => inner.trim(),
        None => s,
    };
    (!inner.is_empty() && inner.bytes().all(|b| b.is_ascii_digit())).then_some(inner)
}

/// A trailing `[k]` after free text, as in `Ranking: [3]`.
fn trailing_bracket_token(segment: &str) -> Option<&str> {
    let s = segment.trim_end();
    let open = s.rfind('[')?;
    parse_id_token(&s[open..])
}

/// A leading `[k]` before free text, as in `[2]. Done.`.
fn leading_bracket_token(segment: &str) -> Option<&str> {
    let s = segment.trim_start();
    let close = s.find(']')?;
    parse_id_token(&s[..=close])
}

/// Parses `[r1] > [r2] > ...` against the ids `1..=n`.
///
/// Tokens may be `[k]` or bare `k`. Duplicates keep their first occurrence,
/// unknown ids and unrecognized segments are dropped, and ids the response
/// omitted are appended in ascending order. Each repair is recorded.
pub fn parse_ranking(raw: &str, n: usize) -> Result<(Vec<usize>, Vec<Repair>), Unparseable> {
    let segments: Vec<&str> = raw.split('>').collect();
    let last = segments.len() - 1;
    let mut order = Vec::with_capacity(n);
    let mut seen = HashSet::with_capacity(n);
    let mut repairs = Vec::new();
    let mut any_token = false;

    for (i, seg) in segments.iter().enumerate() {
        let token = parse_id_token(seg)
            .or_else(|| (i == 0).then(|| trailing_bracket_token(seg)).flatten())
            .or_else(|| (i == last).then(|| leading_bracket_token(seg)).flatten());
        let Some(token) = token else {
            if !seg.trim().is_empty() {
                repairs.push(Repair::UnrecognizedSegment(seg.trim().to_string()));
            }
            continue;
        };
        any_token = true;
        match token.parse::<usize>() {
            Ok(id) if (1..=n).contains(&id) => {
                if seen.insert(id) {
                    order.push(id);
                } else {
                    repairs.push(Repair::DuplicateDropped(id));
                }
            }
            _ => repairs.push(Repair::UnknownDropped(token.to_string())),
        }
    }
    if !any_token {
        return Err(Unparseable);
    }
    for id in 1..=n {
        if !seen.contains(&id) {
            order.push(id);
            repairs.push(Repair::MissingAppended(id));
        }
    }
    Ok((order, repairs))
}

/// Candidate texts for the Stage 2 prompt.
pub fn ranking_entries<'a>(
    instance: &'a TrainingInstance,
    snippets: &'a SnippetSet,
    mode: RankingMode,
) -> Vec<EntryText<'a>> {
    match mode {
        RankingMode::SnippetCentric => snippets
            .entries()
            .map(|(_, s)| s.text().map_or(EntryText::NoAnswer, EntryText::Text))
            .collect(),
        RankingMode::PassageCentric => instance
            .ranked_candidates()
            .into_iter()
            .map(|d| EntryText::Text(d.truncated_text.as_str()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Output {
    pub ranking: RankingOutcome,
    pub flags: Vec<Flag>,
}

/// Requests a listwise order, retrying once when the response is malformed.
/// Singletons resolve to `[1]` without a request.
pub async fn rank_snippets(
    instance: &TrainingInstance,
    snippets: &SnippetSet,
    gateway: &Gateway,
    mode: RankingMode,
) -> Result<Stage2Output, GatewayError> {
    let n = snippets.len();
    if n <= 1 {
        return Ok(Stage2Output {
            ranking: RankingOutcome::identity(n),
            flags: Vec::new(),
        });
    }
    let entries = ranking_entries(instance, snippets, mode);
    let prompt = build_stage2_prompt(&snippets.query, &entries, mode);
    let id = &instance.instance_id;

    let first = gateway.complete(&prompt, id).await?;
    let mut parsed = parse_ranking(&first, n).ok().map(|p| (p, first.clone()));
    let clean = matches!(&parsed, Some(((_, repairs), _)) if repairs.is_empty());
    if !clean {
        let complaint = match &parsed {
            None => "no snippet ids were found".to_string(),
            Some(((_, repairs), _)) => format!(
                "the ranking must list every id from 1 to {n} exactly once; problems: {}",
                repairs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
            ),
        };
        let second = gateway.complete(&corrective_prompt(&prompt, &first, &complaint), id).await?;
        if let Ok(p) = parse_ranking(&second, n) {
            parsed = Some((p, second));
        }
    }

    let mut flags = Vec::new();
    let ranking = match parsed {
        Some(((order, repairs), raw_response)) => {
            if !repairs.is_empty() {
                add_flag(&mut flags, Flag::RankingRepaired);
            }
            RankingOutcome {
                order,
                repairs,
                raw_response,
                fallback: false,
            }
        }
        None => {
            add_flag(&mut flags, Flag::RankingUnparseable);
            RankingOutcome {
                raw_response: first,
                fallback: true,
                ..RankingOutcome::identity(n)
            }
        }
    };
    Ok(Stage2Output { ranking, flags })
}
