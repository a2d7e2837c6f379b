//! Two-assessor blinded annotation sessions with adjudication.
//!
//! Assessor-facing views ([`AssessorItem`], [`DisagreementView`],
//! [`Progress`]) have no field for the judge label; it only appears in
//! [`ExportRow`] once every item is done.

mod server;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytics::{cohen_kappa, AnnotationItem};

pub use server::{router, serve, SessionStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assessor {
    A,
    B,
}

impl FromStr for Assessor {
    type Err = ReviewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            other => Err(ReviewError::UnknownAssessor(other.to_string())),
        }
    }
}

impl fmt::Display for Assessor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A => "A",
            Self::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemStatus {
    /// At least one assessor has not judged yet.
    Pending,
    /// Both judged, labels differ, no adjudicated label yet.
    Disagreed,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown assessor {0:?}, expected A or B")]
    UnknownAssessor(String),
    #[error("unknown pair {0}")]
    UnknownItem(String),
    #[error("duplicate pair {0} in session items")]
    DuplicateItem(String),
    #[error("assessor {assessor} already judged {pair_id}")]
    AlreadyJudged { pair_id: String, assessor: Assessor },
    #[error("pair {0} is not awaiting adjudication")]
    NotDisagreed(String),
    #[error("session incomplete: {remaining} items not done")]
    Incomplete { remaining: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgments {
    pub a: Option<bool>,
    pub b: Option<bool>,
}

impl Judgments {
    fn get(&self, who: Assessor) -> Option<bool> {
        match who {
            Assessor::A => self.a,
            Assessor::B => self.b,
        }
    }

    fn slot(&mut self, who: Assessor) -> &mut Option<bool> {
        match who {
            Assessor::A => &mut self.a,
            Assessor::B => &mut self.b,
        }
    }
}

/// What an assessor sees while annotating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessorItem {
    pub pair_id: String,
    pub query: String,
    pub negative_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisagreementView {
    pub pair_id: String,
    pub query: String,
    pub negative_text: String,
    pub label_a: bool,
    pub label_b: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Progress {
    pub total: usize,
    pub judged_a: usize,
    pub judged_b: usize,
    pub disagreed: usize,
    pub adjudicated: usize,
    pub done: usize,
}

/// One line of the export file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub pair_id: String,
    pub label: bool,
    pub label_a: bool,
    pub label_b: bool,
    pub llm_label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub judge: String,
    pub n: usize,
    /// Judge labels against adjudicated human labels.
    pub kappa: f64,
    pub kappa_a_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    /// Model tag of the judge whose labels are under review.
    #[serde(default)]
    pub judge: String,
    items: Vec<AnnotationItem>,
    judgments: BTreeMap<String, Judgments>,
    adjudicated: BTreeMap<String, bool>,
}

impl Session {
    pub fn new(
        session_id: impl Into<String>,
        judge: impl Into<String>,
        items: Vec<AnnotationItem>,
    ) -> Result<Self, ReviewError> {
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.pair_id.as_str()) {
                return Err(ReviewError::DuplicateItem(item.pair_id.clone()));
            }
        }
        Ok(Self {
            session_id: session_id.into(),
            judge: judge.into(),
            items,
            judgments: BTreeMap::new(),
            adjudicated: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn item(&self, pair_id: &str) -> Result<&AnnotationItem, ReviewError> {
        self.items
            .iter()
            .find(|i| i.pair_id == pair_id)
            .ok_or_else(|| ReviewError::UnknownItem(pair_id.to_string()))
    }

    fn judgments_of(&self, pair_id: &str) -> Judgments {
        self.judgments.get(pair_id).copied().unwrap_or_default()
    }

    pub fn status(&self, pair_id: &str) -> Result<ItemStatus, ReviewError> {
        self.item(pair_id)?;
        Ok(self.status_unchecked(pair_id))
    }

    fn status_unchecked(&self, pair_id: &str) -> ItemStatus {
        match self.judgments_of(pair_id) {
            Judgments { a: Some(a), b: Some(b) } if a == b => ItemStatus::Done,
            Judgments { a: Some(_), b: Some(_) } if self.adjudicated.contains_key(pair_id) => ItemStatus::Done,
            Judgments { a: Some(_), b: Some(_) } => ItemStatus::Disagreed,
            _ => ItemStatus::Pending,
        }
    }

    /// Final human label, available once the item is done.
    pub fn final_label(&self, pair_id: &str) -> Option<bool> {
        self.adjudicated.get(pair_id).copied()
    }

    /// First item `who` has not judged. With `after`, the search starts past
    /// that pair and wraps around, which is how a skipped item returns to the
    /// pool without being shown twice in a row.
    pub fn next_for(&self, who: Assessor, after: Option<&str>) -> Option<AssessorItem> {
        let start = after
            .and_then(|p| self.items.iter().position(|i| i.pair_id == p))
            .map_or(0, |i| i + 1);
        let n = self.items.len();
        (0..n)
            .map(|k| &self.items[(start + k) % n])
            .find(|i| self.judgments_of(&i.pair_id).get(who).is_none())
            .map(|i| AssessorItem {
                pair_id: i.pair_id.clone(),
                query: i.query.clone(),
                negative_text: i.negative_text.clone(),
            })
    }

    pub fn judge(&mut self, pair_id: &str, who: Assessor, label: bool) -> Result<ItemStatus, ReviewError> {
        self.item(pair_id)?;
        let entry = self.judgments.entry(pair_id.to_string()).or_default();
        let slot = entry.slot(who);
        if slot.is_some() {
            return Err(ReviewError::AlreadyJudged {
                pair_id: pair_id.to_string(),
                assessor: who,
            });
        }
        *slot = Some(label);
        if let Judgments { a: Some(a), b: Some(b) } = *entry {
            if a == b {
                self.adjudicated.insert(pair_id.to_string(), a);
            }
        }
        Ok(self.status_unchecked(pair_id))
    }

    pub fn disagreements(&self) -> Vec<DisagreementView> {
        self.items
            .iter()
            .filter(|i| self.status_unchecked(&i.pair_id) == ItemStatus::Disagreed)
            .map(|i| {
                let j = self.judgments_of(&i.pair_id);
                DisagreementView {
                    pair_id: i.pair_id.clone(),
                    query: i.query.clone(),
                    negative_text: i.negative_text.clone(),
                    label_a: j.a.unwrap_or_default(),
                    label_b: j.b.unwrap_or_default(),
                }
            })
            .collect()
    }

    pub fn adjudicate(&mut self, pair_id: &str, label: bool) -> Result<ItemStatus, ReviewError> {
        if self.status(pair_id)? != ItemStatus::Disagreed {
            return Err(ReviewError::NotDisagreed(pair_id.to_string()));
        }
        self.adjudicated.insert(pair_id.to_string(), label);
        Ok(ItemStatus::Done)
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            total: self.items.len(),
            judged_a: 0,
            judged_b: 0,
            disagreed: 0,
            adjudicated: 0,
            done: 0,
        };
        for item in &self.items {
            let j = self.judgments_of(&item.pair_id);
            p.judged_a += j.a.is_some() as usize;
            p.judged_b += j.b.is_some() as usize;
            let disagree = matches!(j, Judgments { a: Some(a), b: Some(b) } if a != b);
            match self.status_unchecked(&item.pair_id) {
                ItemStatus::Disagreed => p.disagreed += 1,
                ItemStatus::Done => {
                    p.done += 1;
                    p.adjudicated += disagree as usize;
                }
                ItemStatus::Pending => {}
            }
        }
        p
    }

    pub fn is_complete(&self) -> bool {
        let p = self.progress();
        p.done == p.total
    }

    /// Full labels, including the judge's, once every item is done.
    pub fn export(&self) -> Result<Vec<ExportRow>, ReviewError> {
        let p = self.progress();
        if p.done < p.total {
            return Err(ReviewError::Incomplete {
                remaining: p.total - p.done,
            });
        }
        Ok(self
            .items
            .iter()
            .map(|i| {
                let j = self.judgments_of(&i.pair_id);
                ExportRow {
                    pair_id: i.pair_id.clone(),
                    label: self.adjudicated[&i.pair_id],
                    label_a: j.a.unwrap_or_default(),
                    label_b: j.b.unwrap_or_default(),
                    llm_label: i.llm_label,
                }
            })
            .collect())
    }

    pub fn kappa(&self) -> Result<KappaSummary, ReviewError> {
        let rows = self.export()?;
        if rows.is_empty() {
            return Err(ReviewError::Incomplete { remaining: 0 });
        }
        let human: Vec<bool> = rows.iter().map(|r| r.label).collect();
        let llm: Vec<bool> = rows.iter().map(|r| r.llm_label).collect();
        let a: Vec<bool> = rows.iter().map(|r| r.label_a).collect();
        let b: Vec<bool> = rows.iter().map(|r| r.label_b).collect();
        Ok(KappaSummary {
            judge: self.judge.clone(),
            n: rows.len(),
            kappa: cohen_kappa(&llm, &human).expect("non-empty, equal lengths"),
            kappa_a_b: cohen_kappa(&a, &b).expect("non-empty, equal lengths"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(n: usize) -> Vec<AnnotationItem> {
        (0..n)
            .map(|i| AnnotationItem {
                pair_id: format!("q{i}::d"),
                query: format!("query {i}"),
                negative_text: format!("text {i}"),
                llm_label: i % 2 == 0,
            })
            .collect()
    }

    #[test]
    fn agreement_is_done_immediately() {
        let mut s = Session::new("s", "m", items(1)).unwrap();
        assert_eq!(s.judge("q0::d", Assessor::A, true), Ok(ItemStatus::Pending));
        assert_eq!(s.judge("q0::d", Assessor::B, true), Ok(ItemStatus::Done));
        assert_eq!(s.final_label("q0::d"), Some(true));
    }

    #[test]
    fn disagreement_needs_adjudication() {
        let mut s = Session::new("s", "m", items(1)).unwrap();
        s.judge("q0::d", Assessor::A, true).unwrap();
        assert_eq!(s.judge("q0::d", Assessor::B, false), Ok(ItemStatus::Disagreed));
        assert_eq!(s.export(), Err(ReviewError::Incomplete { remaining: 1 }));
        assert_eq!(s.disagreements().len(), 1);
        assert_eq!(s.adjudicate("q0::d", false), Ok(ItemStatus::Done));
        assert!(s.disagreements().is_empty());
        assert!(!s.export().unwrap()[0].label);
    }

    #[test]
    fn double_judgment_conflicts() {
        let mut s = Session::new("s", "m", items(1)).unwrap();
        s.judge("q0::d", Assessor::A, true).unwrap();
        assert!(matches!(
            s.judge("q0::d", Assessor::A, false),
            Err(ReviewError::AlreadyJudged { .. })
        ));
    }

    #[test]
    fn adjudicating_an_agreed_item_is_refused() {
        let mut s = Session::new("s", "m", items(1)).unwrap();
        s.judge("q0::d", Assessor::A, true).unwrap();
        assert_eq!(s.adjudicate("q0::d", true), Err(ReviewError::NotDisagreed("q0::d".into())));
    }

    #[test]
    fn next_skips_own_judgments_and_wraps() {
        let mut s = Session::new("s", "m", items(3)).unwrap();
        assert_eq!(s.next_for(Assessor::A, None).unwrap().pair_id, "q0::d");
        s.judge("q0::d", Assessor::A, true).unwrap();
        assert_eq!(s.next_for(Assessor::A, None).unwrap().pair_id, "q1::d");
        assert_eq!(s.next_for(Assessor::B, None).unwrap().pair_id, "q0::d");
        assert_eq!(s.next_for(Assessor::A, Some("q2::d")).unwrap().pair_id, "q1::d");
        assert_eq!(s.next_for(Assessor::A, Some("q1::d")).unwrap().pair_id, "q2::d");
        s.judge("q1::d", Assessor::A, true).unwrap();
        // the only unjudged item comes back even when it was just skipped
        assert_eq!(s.next_for(Assessor::A, Some("q2::d")).unwrap().pair_id, "q2::d");
        s.judge("q2::d", Assessor::A, true).unwrap();
        assert!(s.next_for(Assessor::A, None).is_none());
    }

    #[test]
    fn assessor_views_omit_llm_label() {
        let mut s = Session::new("s", "m", items(2)).unwrap();
        let item = serde_json::to_value(s.next_for(Assessor::A, None).unwrap()).unwrap();
        assert_eq!(item.as_object().unwrap().len(), 3);
        s.judge("q0::d", Assessor::A, true).unwrap();
        s.judge("q0::d", Assessor::B, false).unwrap();
        for v in [serde_json::to_value(s.disagreements()).unwrap(), serde_json::to_value(s.progress()).unwrap()] {
            assert!(!v.to_string().contains("llm_label"));
        }
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let mut it = items(2);
        it[1].pair_id = it[0].pair_id.clone();
        assert!(matches!(Session::new("s", "m", it), Err(ReviewError::DuplicateItem(_))));
    }

    #[test]
    fn kappa_after_completion() {
        let mut s = Session::new("s", "m", items(4)).unwrap();
        // llm labels: [1,0,1,0]; human labels: [1,0,0,0]
        for (i, label) in [true, false, false, false].into_iter().enumerate() {
            let id = format!("q{i}::d");
            s.judge(&id, Assessor::A, label).unwrap();
            s.judge(&id, Assessor::B, label).unwrap();
        }
        let k = s.kappa().unwrap();
        assert!((k.kappa - 0.5).abs() < 1e-12);
        assert_eq!(k.kappa_a_b, 1.0);
    }
}
