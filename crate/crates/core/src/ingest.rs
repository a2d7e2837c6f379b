//! Line-delimited triplet corpora: reading, truncation, and writing refined
//! output with its provenance sidecar.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use unicode_segmentation::UnicodeSegmentation;

use crate::model::{
    Action, Document, Flag, ModelError, Reason, RefinedInstance, SnippetSet, TrainingInstance,
};

/// Field names used by a corpus. Documents may be plain strings or objects
/// carrying `doc_id_field` / `doc_text_field`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletSchema {
    pub query_field: String,
    pub pos_field: String,
    pub neg_field: String,
    pub id_field: String,
    pub dataset_field: String,
    pub doc_id_field: String,
    pub doc_text_field: String,
}

impl Default for TripletSchema {
    fn default() -> Self {
        Self {
            query_field: "query".into(),
            pos_field: "pos".into(),
            neg_field: "neg".into(),
            id_field: "id".into(),
            dataset_field: "source".into(),
            doc_id_field: "id".into(),
            doc_text_field: "text".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationUnit {
    #[default]
    Words,
    /// Extended grapheme clusters.
    Characters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub max_seq_len: usize,
    pub unit: TruncationUnit,
}

/// Recomputes `truncated_text` as the longest prefix of `doc.text` holding at
/// most `max_seq_len` units. Words are whitespace-delimited; a unit is never
/// split. A `max_seq_len` of zero is treated as one.
pub fn truncate(doc: &Document, max_seq_len: usize, unit: TruncationUnit) -> Document {
    let limit = max_seq_len.max(1);
    let cut = match unit {
        TruncationUnit::Words => word_prefix_end(&doc.text, limit),
        TruncationUnit::Characters => doc.text.grapheme_indices(true).nth(limit).map(|(i, _)| i),
    };
    let mut out = doc.clone();
    match cut {
        Some(end) => {
            out.truncated_text = doc.text[..end].to_string();
            out.truncation_applied = true;
        }
        None => {
            out.truncated_text = doc.text.clone();
            out.truncation_applied = false;
        }
    }
    out
}

/// Byte offset just past the `limit`-th word, if more words follow it.
fn word_prefix_end(text: &str, limit: usize) -> Option<usize> {
    let mut words = 0;
    let mut in_word = false;
    let mut end_of_limit = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                in_word = false;
                if words == limit {
                    end_of_limit = Some(i);
                }
            }
        } else if !in_word {
            in_word = true;
            words += 1;
            if words == limit + 1 {
                return end_of_limit;
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnMalformed {
    #[default]
    Abort,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordErrorKind {
    #[error("malformed-json: {0}")]
    Json(String),
    #[error("missing-field: {0}")]
    MissingField(String),
    #[error("missing-positive")]
    MissingPositive,
    #[error("invalid-document: {0}")]
    InvalidDocument(String),
    #[error("duplicate-doc-id: {0}")]
    DuplicateDocId(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct RecordError {
    pub line: usize,
    pub kind: RecordErrorKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReaderConfig {
    pub schema: TripletSchema,
    pub truncation: Option<Truncation>,
    pub on_malformed: OnMalformed,
}

/// Parses one record. `line` is 1-based and doubles as the instance id when
/// the record has no id field.
pub fn parse_record(
    raw: &str,
    line: usize,
    schema: &TripletSchema,
) -> Result<TrainingInstance, RecordErrorKind> {
    let value: Value = serde_json::from_str(raw).map_err(|e| RecordErrorKind::Json(e.to_string()))?;
    let Value::Object(mut fields) = value else {
        return Err(RecordErrorKind::Json("record is not an object".into()));
    };

    let query = match fields.remove(&schema.query_field) {
        Some(Value::String(q)) => q,
        Some(_) => return Err(RecordErrorKind::InvalidDocument(format!("{} is not a string", schema.query_field))),
        None => return Err(RecordErrorKind::MissingField(schema.query_field.clone())),
    };
    let pos = fields
        .remove(&schema.pos_field)
        .ok_or_else(|| RecordErrorKind::MissingField(schema.pos_field.clone()))?;
    let neg = fields.remove(&schema.neg_field).unwrap_or(Value::Array(Vec::new()));

    let instance_id = match fields.get(&schema.id_field) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => line.to_string(),
    };
    let source_dataset = match fields.get(&schema.dataset_field) {
        Some(Value::String(s)) => s.clone(),
        _ => String::new(),
    };

    let positives = parse_docs(pos, &instance_id, "pos", schema)?;
    let negatives = parse_docs(neg, &instance_id, "neg", schema)?;

    let instance = TrainingInstance {
        instance_id,
        query,
        positives,
        negatives,
        source_dataset,
        extra: fields,
    };
    instance.validate().map_err(|e| match e {
        ModelError::MissingPositive(_) => RecordErrorKind::MissingPositive,
        ModelError::DuplicateDocId { doc_id, .. } => RecordErrorKind::DuplicateDocId(doc_id),
    })?;
    Ok(instance)
}

fn parse_docs(
    value: Value,
    instance_id: &str,
    role: &str,
    schema: &TripletSchema,
) -> Result<Vec<Document>, RecordErrorKind> {
    let Value::Array(items) = value else {
        return Err(RecordErrorKind::InvalidDocument(format!("{role} is not a list")));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(k, item)| match item {
            Value::String(text) => Ok(Document::new(format!("{instance_id}#{role}{k}"), text).with_synthetic_id()),
            Value::Object(mut obj) => {
                let text = match obj.remove(&schema.doc_text_field) {
                    Some(Value::String(t)) => t,
                    _ => {
                        return Err(RecordErrorKind::InvalidDocument(format!(
                            "{role}[{k}] lacks a string `{}`",
                            schema.doc_text_field
                        )))
                    }
                };
                match obj.remove(&schema.doc_id_field) {
                    Some(Value::String(id)) => Ok(Document::new(id, text)),
                    Some(Value::Number(n)) => Ok(Document::new(n.to_string(), text)),
                    _ => Ok(Document::new(format!("{instance_id}#{role}{k}"), text).with_synthetic_id()),
                }
            }
            _ => Err(RecordErrorKind::InvalidDocument(format!("{role}[{k}] is neither text nor object"))),
        })
        .collect()
}

/// Streams instances from a line-delimited reader. Under
/// [`OnMalformed::Abort`] the first bad record is yielded as an error and the
/// stream ends; under [`OnMalformed::Skip`] bad records are counted and skipped.
pub struct InstanceReader<R> {
    lines: io::Lines<R>,
    line: usize,
    config: ReaderConfig,
    skipped: usize,
    done: bool,
}

impl InstanceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, config: ReaderConfig) -> io::Result<Self> {
        Ok(Self::new(BufReader::new(File::open(path)?), config))
    }
}

impl<R: BufRead> InstanceReader<R> {
    pub fn new(reader: R, config: ReaderConfig) -> Self {
        Self {
            lines: reader.lines(),
            line: 0,
            config,
            skipped: 0,
            done: false,
        }
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for InstanceReader<R> {
    type Item = Result<TrainingInstance, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            let raw = match self.lines.next()? {
                Ok(raw) => raw,
                Err(e) => {
                    self.done = true;
                    return Some(Err(RecordError {
                        line: self.line + 1,
                        kind: RecordErrorKind::Io(e.to_string()),
                    }));
                }
            };
            self.line += 1;
            if raw.trim().is_empty() {
                continue;
            }
            match parse_record(&raw, self.line, &self.config.schema) {
                Ok(mut instance) => {
                    if let Some(t) = self.config.truncation {
                        for doc in instance.positives.iter_mut().chain(instance.negatives.iter_mut()) {
                            *doc = truncate(doc, t.max_seq_len, t.unit);
                        }
                    }
                    return Some(Ok(instance));
                }
                Err(kind) => {
                    let err = RecordError { line: self.line, kind };
                    match self.config.on_malformed {
                        OnMalformed::Abort => {
                            self.done = true;
                            return Some(Err(err));
                        }
                        OnMalformed::Skip => {
                            tracing::warn!(%err, "skipping malformed record");
                            self.skipped += 1;
                        }
                    }
                }
            }
        }
        None
    }
}

/// Serializes documents and query back into the corpus schema.
pub fn instance_record(
    query: &str,
    positives: &[Document],
    negatives: &[Document],
    extra: &Map<String, Value>,
    schema: &TripletSchema,
) -> Value {
    let doc_value = |d: &Document| {
        if d.synthetic_id {
            Value::String(d.text.clone())
        } else {
            let mut obj = Map::new();
            obj.insert(schema.doc_id_field.clone(), Value::String(d.doc_id.clone()));
            obj.insert(schema.doc_text_field.clone(), Value::String(d.text.clone()));
            Value::Object(obj)
        }
    };
    let mut record = extra.clone();
    record.insert(schema.query_field.clone(), Value::String(query.to_string()));
    record.insert(schema.pos_field.clone(), positives.iter().map(doc_value).collect());
    record.insert(schema.neg_field.clone(), negatives.iter().map(doc_value).collect());
    Value::Object(record)
}

/// One row of the provenance sidecar: the decision behind one negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub instance_id: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub judge: String,
    pub doc_id: String,
    pub action: Action,
    pub reason: Reason,
    pub rank: Option<usize>,
    /// Span text, the literal `NO_ANSWER`, or null when Stage 1 never ran.
    pub snippet: Option<String>,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl ProvenanceRecord {
    pub fn for_instance(
        refined: &RefinedInstance,
        snippets: Option<&SnippetSet>,
        judge: &str,
    ) -> Vec<ProvenanceRecord> {
        refined
            .decisions
            .iter()
            .enumerate()
            .map(|(i, decision)| {
                let snippet = snippets.and_then(|s| s.get(i + 2));
                let mut flags = refined.flags.clone();
                if let Some(s) = snippet {
                    for f in &s.flags {
                        crate::model::add_flag(&mut flags, *f);
                    }
                }
                ProvenanceRecord {
                    instance_id: refined.instance_id.clone(),
                    dataset: refined.source_dataset.clone(),
                    judge: judge.to_string(),
                    doc_id: decision.doc_id.clone(),
                    action: decision.action,
                    reason: decision.reason,
                    rank: decision.rank,
                    snippet: snippet.map(|s| s.display_text().to_string()),
                    flags,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteSummary {
    pub instances: usize,
    pub promoted: usize,
    pub filtered: usize,
    pub retained: usize,
    pub provenance_rows: usize,
    pub flags: BTreeMap<String, usize>,
}

impl WriteSummary {
    pub fn absorb(&mut self, refined: &RefinedInstance) {
        self.instances += 1;
        self.promoted += refined.count(Action::PromoteToPositive);
        self.filtered += refined.count(Action::FilterOut);
        self.retained += refined.count(Action::RetainNegative);
        for flag in &refined.flags {
            *self.flags.entry(flag.to_string()).or_default() += 1;
        }
    }
}

/// Path of the marker that flags an output file as incomplete.
pub fn partial_marker(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out.with_file_name(name)
}

/// Writes refined triplets and provenance. A `.partial` marker exists next to
/// the output from creation until [`RefinedWriter::finish`] succeeds.
pub struct RefinedWriter {
    out: BufWriter<File>,
    provenance: BufWriter<File>,
    out_path: PathBuf,
    schema: TripletSchema,
    judge: String,
    summary: WriteSummary,
}

impl RefinedWriter {
    pub fn create(
        out_path: impl AsRef<Path>,
        provenance_path: impl AsRef<Path>,
        schema: TripletSchema,
        judge: impl Into<String>,
    ) -> io::Result<Self> {
        let out_path = out_path.as_ref().to_path_buf();
        fs::write(partial_marker(&out_path), b"incomplete\n")?;
        Ok(Self {
            out: BufWriter::new(File::create(&out_path)?),
            provenance: BufWriter::new(File::create(provenance_path)?),
            out_path,
            schema,
            judge: judge.into(),
            summary: WriteSummary::default(),
        })
    }

    pub fn write(&mut self, refined: &RefinedInstance, snippets: Option<&SnippetSet>) -> io::Result<()> {
        let record = instance_record(
            &refined.query,
            &refined.new_positives,
            &refined.new_negatives,
            &refined.extra,
            &self.schema,
        );
        serde_json::to_writer(&mut self.out, &record)?;
        self.out.write_all(b"\n")?;
        for row in ProvenanceRecord::for_instance(refined, snippets, &self.judge) {
            serde_json::to_writer(&mut self.provenance, &row)?;
            self.provenance.write_all(b"\n")?;
            self.summary.provenance_rows += 1;
        }
        self.summary.absorb(refined);
        Ok(())
    }

    pub fn summary(&self) -> &WriteSummary {
        &self.summary
    }

    pub fn finish(mut self) -> io::Result<WriteSummary> {
        self.out.flush()?;
        self.provenance.flush()?;
        self.out.get_ref().sync_all()?;
        self.provenance.get_ref().sync_all()?;
        fs::remove_file(partial_marker(&self.out_path))?;
        Ok(self.summary)
    }
}

/// Writes a whole stream of refined instances without snippet context.
pub fn write_refined<'a>(
    refined: impl IntoIterator<Item = &'a RefinedInstance>,
    out_path: impl AsRef<Path>,
    provenance_path: impl AsRef<Path>,
    schema: TripletSchema,
) -> io::Result<WriteSummary> {
    let mut writer = RefinedWriter::create(out_path, provenance_path, schema, "")?;
    for r in refined {
        writer.write(r, None)?;
    }
    writer.finish()
}

/// Reads a provenance sidecar.
pub fn read_provenance(path: impl AsRef<Path>) -> io::Result<Vec<ProvenanceRecord>> {
    read_jsonl(path)
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(value);
    }
    Ok(out)
}
