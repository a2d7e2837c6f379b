//! Refinement statistics, Cohen's kappa and validation-set sampling.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::ProvenanceRecord;
use crate::model::{Action, TrainingInstance};

/// Per-scope totals. Means are `total / n_queries`, computed on demand.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeStats {
    pub scope: String,
    pub n_queries: usize,
    pub negatives: usize,
    pub promoted: usize,
    pub filtered: usize,
    pub retained: usize,
    /// Number of queries carrying each flag.
    pub flag_counts: BTreeMap<String, usize>,
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

impl ScopeStats {
    pub fn relabeled_pos_mean(&self) -> f64 {
        mean(self.promoted, self.n_queries)
    }

    pub fn filtered_neg_mean(&self) -> f64 {
        mean(self.filtered, self.n_queries)
    }

    pub fn retained_mean(&self) -> f64 {
        mean(self.retained, self.n_queries)
    }

    pub fn negatives_mean(&self) -> f64 {
        mean(self.negatives, self.n_queries)
    }
}

/// Machine-readable stats line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub scope: String,
    pub relabeled_pos_mean: f64,
    pub filtered_neg_mean: f64,
    pub retained_mean: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    /// `overall` first, then datasets in name order.
    pub scopes: Vec<ScopeStats>,
}

impl StatsReport {
    pub fn overall(&self) -> &ScopeStats {
        &self.scopes[0]
    }

    pub fn scope(&self, name: &str) -> Option<&ScopeStats> {
        self.scopes.iter().find(|s| s.scope == name)
    }

    pub fn records(&self) -> Vec<StatsRecord> {
        self.scopes
            .iter()
            .map(|s| StatsRecord {
                scope: s.scope.clone(),
                relabeled_pos_mean: s.relabeled_pos_mean(),
                filtered_neg_mean: s.filtered_neg_mean(),
                retained_mean: s.retained_mean(),
                n_queries: s.n_queries,
            })
            .collect()
    }

    /// Aligned text table, one row per scope, labelled with `judge`.
    pub fn render_table(&self, judge: &str) -> String {
        let fmt_n = |v: f64| {
            if v.fract() == 0.0 {
                format!("{v:.0}")
            } else {
                format!("{v:.1}")
            }
        };
        let header = ["LLM", "Scope", "N", "Relabeled Pos.", "Filtered Neg.", "Retained Neg.", "Queries"];
        let rows: Vec<[String; 7]> = self
            .scopes
            .iter()
            .map(|s| {
                [
                    judge.to_string(),
                    s.scope.clone(),
                    fmt_n(s.negatives_mean()),
                    format!("{:.1}", s.relabeled_pos_mean()),
                    format!("{:.1}", s.filtered_neg_mean()),
                    format!("{:.1}", s.retained_mean()),
                    s.n_queries.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        for row in &rows {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let flags = &self.overall().flag_counts;
        if !flags.is_empty() {
            let _ = writeln!(out, "\nflags (queries):");
            for (flag, n) in flags {
                let _ = writeln!(out, "  {flag}: {n}");
            }
        }
        out
    }
}

/// Aggregates provenance rows into per-dataset and overall statistics.
/// Queries are counted once per distinct `(dataset, instance_id)`.
pub fn refinement_stats<'a>(records: impl IntoIterator<Item = &'a ProvenanceRecord>) -> StatsReport {
    let mut overall = ScopeStats {
        scope: "overall".into(),
        ..ScopeStats::default()
    };
    let mut per_dataset: BTreeMap<String, ScopeStats> = BTreeMap::new();
    let mut seen_instances: HashSet<(String, String)> = HashSet::new();
    let mut instance_flags: HashMap<(String, String), BTreeSet<String>> = HashMap::new();

    for r in records {
        let key = (r.dataset.clone(), r.instance_id.clone());
        let scope = per_dataset
            .entry(if r.dataset.is_empty() { "default".into() } else { r.dataset.clone() })
            .or_insert_with_key(|k| ScopeStats {
                scope: k.clone(),
                ..ScopeStats::default()
            });
        if seen_instances.insert(key.clone()) {
            scope.n_queries += 1;
            overall.n_queries += 1;
        }
        for s in [&mut overall, scope] {
            s.negatives += 1;
            match r.action {
                Action::PromoteToPositive => s.promoted += 1,
                Action::FilterOut => s.filtered += 1,
                Action::RetainNegative => s.retained += 1,
            }
        }
        let flags = instance_flags.entry(key).or_default();
        flags.extend(r.flags.iter().map(ToString::to_string));
    }

    for ((dataset, _), flags) in instance_flags {
        let name = if dataset.is_empty() { "default".to_string() } else { dataset };
        for f in flags {
            *overall.flag_counts.entry(f.clone()).or_default() += 1;
            if let Some(s) = per_dataset.get_mut(&name) {
                *s.flag_counts.entry(f).or_default() += 1;
            }
        }
    }

    let mut scopes = vec![overall];
    if per_dataset.len() > 1 || per_dataset.keys().any(|k| k != "default") {
        scopes.extend(per_dataset.into_values());
    }
    StatsReport { scopes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum KappaError {
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label vectors are empty")]
    Empty,
}

/// Cohen's kappa for two binary raters, computed from integer counts with a
/// single final division. Two identical constant vectors give 1.0.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<f64, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(KappaError::Empty);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let a1 = a.iter().filter(|&&x| x).count() as i128;
    let b1 = b.iter().filter(|&&x| x).count() as i128;
    let chance = a1 * b1 + (n - a1) * (n - b1);
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok((n * agree - chance) as f64 / denom as f64)
}

/// A sampled query–negative pair with the judge's hidden label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledPair {
    pub pair_id: String,
    pub instance_id: String,
    pub doc_id: String,
    pub llm_label: bool,
}

pub fn pair_id(instance_id: &str, doc_id: &str) -> String {
    format!("{instance_id}::{doc_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("insufficient qualifying pairs: requested {requested}, available {available}")]
    Insufficient { requested: usize, available: usize },
    #[error("pair {0} was not found in the corpus")]
    MissingText(String),
}

/// Pairs in the validation pool: every negative of a query with at least one
/// promoted negative. `llm_label` is `true` exactly for promoted negatives.
pub fn qualifying_pairs<'a>(records: impl IntoIterator<Item = &'a ProvenanceRecord>) -> Vec<SampledPair> {
    let rows: Vec<&ProvenanceRecord> = records.into_iter().collect();
    let qualifying: HashSet<&str> = rows
        .iter()
        .filter(|r| r.action == Action::PromoteToPositive)
        .map(|r| r.instance_id.as_str())
        .collect();
    rows.iter()
        .filter(|r| qualifying.contains(r.instance_id.as_str()))
        .map(|r| SampledPair {
            pair_id: pair_id(&r.instance_id, &r.doc_id),
            instance_id: r.instance_id.clone(),
            doc_id: r.doc_id.clone(),
            llm_label: r.action == Action::PromoteToPositive,
        })
        .collect()
}

/// Uniform sample without replacement from [`qualifying_pairs`], returned
/// in provenance order.
pub fn sample_validation_set<'a>(
    records: impl IntoIterator<Item = &'a ProvenanceRecord>,
    size: usize,
    seed: u64,
) -> Result<Vec<SampledPair>, SampleError> {
    let pool = qualifying_pairs(records);
    if size > pool.len() {
        return Err(SampleError::Insufficient {
            requested: size,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), size).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

/// An item as stored in the annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub pair_id: String,
    pub query: String,
    pub negative_text: String,
    pub llm_label: bool,
}

/// Joins sampled pairs with query and (truncated) negative text.
pub fn attach_texts(
    pairs: &[SampledPair],
    corpus: impl IntoIterator<Item = TrainingInstance>,
) -> Result<Vec<AnnotationItem>, SampleError> {
    let wanted: HashSet<&str> = pairs.iter().map(|p| p.instance_id.as_str()).collect();
    let mut texts: HashMap<String, (String, String)> = HashMap::new();
    for inst in corpus {
        if !wanted.contains(inst.instance_id.as_str()) {
            continue;
        }
        for d in &inst.negatives {
            texts.insert(
                pair_id(&inst.instance_id, &d.doc_id),
                (inst.query.clone(), d.truncated_text.clone()),
            );
        }
    }
    pairs
        .iter()
        .map(|p| {
            let (query, text) = texts.get(&p.pair_id).ok_or_else(|| SampleError::MissingText(p.pair_id.clone()))?;
            Ok(AnnotationItem {
                pair_id: p.pair_id.clone(),
                query: query.clone(),
                negative_text: text.clone(),
                llm_label: p.llm_label,
            })
        })
        .collect()
}
