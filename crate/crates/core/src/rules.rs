//! Rank-anchored label reconstruction.
//!
//! For each negative with snippet id `i` and anchor id `a`:
//!
//! * `NO_ANSWER` snippet: retained, whatever its rank.
//! * `rank(i) < rank(a)`: promoted to positive (modes that relabel).
//! * `rank(i) > rank(a)`: filtered out of the training data (modes that filter).
//!
//! A rule suppressed by the mode leaves the negative in place with
//! [`Reason::ModeSuppressed`].

use serde::{Deserialize, Serialize};

use crate::model::{
    add_flag, Action, Flag, RankingOutcome, Reason, RefinedInstance, RefinementDecision, RefinementMode, SnippetSet,
    TrainingInstance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleOptions {
    /// In `filter` mode, also drop answer-bearing negatives ranked above the anchor.
    pub filter_above_anchor: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("no-anchor: the ranking does not contain the anchor snippet")]
    NoAnchor,
    #[error("the anchor snippet is NO_ANSWER; the instance must be skipped")]
    AnchorWithoutAnswer,
    #[error("snippet {0} is missing from the ranking")]
    RankMissing(usize),
    #[error("decisions do not match the instance negatives: {0}")]
    DecisionMismatch(String),
}

/// Whether `(action, reason)` may appear together in a decision.
pub fn is_legal(action: Action, reason: Reason) -> bool {
    use Action::*;
    use Reason::*;
    matches!(
        (action, reason),
        (PromoteToPositive, RankedAboveAnchor)
            | (FilterOut, SnippetBelowAnchor)
            | (FilterOut, RankedAboveAnchor)
            | (RetainNegative, NoAnswer)
            | (RetainNegative, ModeSuppressed)
            | (RetainNegative, InstanceSkipped)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decisions {
    pub decisions: Vec<RefinementDecision>,
    pub flags: Vec<Flag>,
}

/// One decision per negative snippet, in snippet-id order.
pub fn decide(
    snippets: &SnippetSet,
    ranking: &RankingOutcome,
    mode: RefinementMode,
    options: RuleOptions,
) -> Result<Decisions, RuleError> {
    let anchor_rank = ranking.rank_of(snippets.anchor_id()).map_err(|_| RuleError::NoAnchor)?;
    if snippets.anchor().is_no_answer() {
        return Err(RuleError::AnchorWithoutAnswer);
    }
    let mut flags = Vec::new();
    let mut decisions = Vec::with_capacity(snippets.len().saturating_sub(1));
    for (id, snippet) in snippets.negatives() {
        let rank = ranking.rank_of(id).map_err(|_| RuleError::RankMissing(id))?;
        let above = rank < anchor_rank;
        let (action, reason) = if snippet.is_no_answer() {
            if above {
                add_flag(&mut flags, Flag::NoanswerAboveAnchor);
            }
            (Action::RetainNegative, Reason::NoAnswer)
        } else if above {
            if mode.promotes() {
                (Action::PromoteToPositive, Reason::RankedAboveAnchor)
            } else if options.filter_above_anchor {
                (Action::FilterOut, Reason::RankedAboveAnchor)
            } else {
                (Action::RetainNegative, Reason::ModeSuppressed)
            }
        } else if mode.filters() {
            (Action::FilterOut, Reason::SnippetBelowAnchor)
        } else {
            (Action::RetainNegative, Reason::ModeSuppressed)
        };
        debug_assert!(is_legal(action, reason));
        decisions.push(RefinementDecision {
            doc_id: snippet.doc_id.clone(),
            action,
            reason,
            rank: Some(rank),
        });
    }
    Ok(Decisions { decisions, flags })
}

/// Retain-everything decisions for instances that cannot be refined.
pub fn skip_decisions(instance: &TrainingInstance) -> Vec<RefinementDecision> {
    instance
        .negatives
        .iter()
        .map(|d| RefinementDecision {
            doc_id: d.doc_id.clone(),
            action: Action::RetainNegative,
            reason: Reason::InstanceSkipped,
            rank: None,
        })
        .collect()
}

/// Rebuilds the positive and negative sets. Promoted documents are appended
/// after the original positives; filtered documents leave the instance.
pub fn apply_decisions(
    instance: &TrainingInstance,
    decisions: Vec<RefinementDecision>,
    mode: RefinementMode,
    mut flags: Vec<Flag>,
) -> Result<RefinedInstance, RuleError> {
    if decisions.len() != instance.negatives.len() {
        return Err(RuleError::DecisionMismatch(format!(
            "{} decisions for {} negatives",
            decisions.len(),
            instance.negatives.len()
        )));
    }
    let mut new_positives = instance.positives.clone();
    let mut new_negatives = Vec::new();
    for (doc, decision) in instance.negatives.iter().zip(&decisions) {
        if doc.doc_id != decision.doc_id {
            return Err(RuleError::DecisionMismatch(format!(
                "expected decision for {}, found {}",
                doc.doc_id, decision.doc_id
            )));
        }
        if !is_legal(decision.action, decision.reason) {
            return Err(RuleError::DecisionMismatch(format!(
                "illegal pair {:?}/{:?} for {}",
                decision.action, decision.reason, doc.doc_id
            )));
        }
        match decision.action {
            Action::PromoteToPositive => new_positives.push(doc.clone()),
            Action::RetainNegative => new_negatives.push(doc.clone()),
            Action::FilterOut => {}
        }
    }
    if !instance.negatives.is_empty() && new_negatives.is_empty() {
        add_flag(&mut flags, Flag::NoNegativesRemaining);
    }
    Ok(RefinedInstance {
        instance_id: instance.instance_id.clone(),
        query: instance.query.clone(),
        source_dataset: instance.source_dataset.clone(),
        new_positives,
        new_negatives,
        decisions,
        mode,
        flags,
        extra: instance.extra.clone(),
    })
}

/// An unrefined pass-through carrying `flags`.
pub fn pass_through(instance: &TrainingInstance, mode: RefinementMode, flags: Vec<Flag>) -> RefinedInstance {
    apply_decisions(instance, skip_decisions(instance), mode, flags).expect("skip decisions always match")
}
