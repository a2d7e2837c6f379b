//! Append-only stage dumps and their replay index.
//!
//! A dump is line-delimited JSON. Rows of one instance are written together
//! as a group; Stage 1 groups start at `seq == 0`, Stage 2 groups are single
//! rows. When an instance appears more than once (a resumed run redoing it)
//! the last group wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{Flag, RankingOutcome, Snippet, SnippetSet, TrainingInstance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Row {
    pub instance_id: String,
    /// Snippet id minus one; 0 is the anchor.
    pub seq: usize,
    #[serde(flatten)]
    pub snippet: Snippet,
}

impl Stage1Row {
    pub fn group(instance_id: &str, snippets: &SnippetSet) -> Vec<Stage1Row> {
        snippets
            .entries()
            .map(|(id, s)| Stage1Row {
                instance_id: instance_id.to_string(),
                seq: id - 1,
                snippet: s.clone(),
            })
            .collect()
    }

    /// Rebuilds the snippet set if `rows` cover exactly the anchor and the
    /// negatives of `instance`, in order.
    pub fn snippet_set(rows: Vec<Stage1Row>, instance: &TrainingInstance) -> Option<SnippetSet> {
        let candidates = instance.ranked_candidates();
        let consistent = rows.len() == candidates.len()
            && rows
                .iter()
                .zip(&candidates)
                .enumerate()
                .all(|(i, (row, doc))| row.seq == i && row.snippet.doc_id == doc.doc_id);
        if !consistent {
            return None;
        }
        let mut snippets = rows.into_iter().map(|r| r.snippet);
        let anchor = snippets.next()?;
        Some(SnippetSet::new(instance.query.clone(), anchor, snippets.collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage2Row {
    pub instance_id: String,
    #[serde(flatten)]
    pub ranking: RankingOutcome,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl Stage2Row {
    /// Whether the stored order is a permutation of `1..=n`.
    pub fn fits(&self, n: usize) -> bool {
        let mut seen = vec![false; n + 1];
        self.ranking.order.len() == n
            && self
                .ranking
                .order
                .iter()
                .all(|&id| (1..=n).contains(&id) && !std::mem::replace(&mut seen[id], true))
    }
}

#[derive(Deserialize)]
struct GroupKey {
    instance_id: String,
    #[serde(default)]
    seq: usize,
}

/// Byte ranges of the latest complete-line group per instance.
pub struct DumpIndex {
    path: PathBuf,
    file: Mutex<File>,
    groups: HashMap<String, (u64, u64)>,
    /// Length of the well-formed prefix (up to the last newline).
    valid_len: u64,
}

impl DumpIndex {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let mut reader = BufReader::new(file.try_clone()?);
        let mut groups = HashMap::new();
        let mut current: Option<(String, u64)> = None;
        let mut offset = 0u64;
        let mut line = Vec::new();
        loop {
            line.clear();
            let n = reader.read_until(b'\n', &mut line)?;
            if n == 0 || line.last() != Some(&b'\n') {
                break;
            }
            let start = offset;
            offset += n as u64;
            match serde_json::from_slice::<GroupKey>(&line) {
                Ok(key) => {
                    let continues = key.seq > 0 && current.as_ref().is_some_and(|(id, _)| *id == key.instance_id);
                    if !continues {
                        current = Some((key.instance_id.clone(), start));
                    }
                    let group_start = current.as_ref().map_or(start, |(_, s)| *s);
                    groups.insert(key.instance_id, (group_start, offset));
                }
                Err(_) => current = None,
            }
        }
        Ok(Self {
            path,
            file: Mutex::new(file),
            groups,
            valid_len: offset,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn contains(&self, instance_id: &str) -> bool {
        self.groups.contains_key(instance_id)
    }

    /// Rows of the latest group for `instance_id`. Rows that fail to parse
    /// make the whole group unavailable.
    pub fn rows<T: DeserializeOwned>(&self, instance_id: &str) -> io::Result<Option<Vec<T>>> {
        let Some(&(start, end)) = self.groups.get(instance_id) else {
            return Ok(None);
        };
        let mut buf = vec![0u8; (end - start) as usize];
        {
            let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
            file.seek(SeekFrom::Start(start))?;
            file.read_exact(&mut buf)?;
        }
        let parsed: Result<Vec<T>, _> = buf
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .map(serde_json::from_slice)
            .collect();
        Ok(parsed.ok())
    }
}

/// Appends groups, flushing after each so a kill loses at most the group in
/// progress.
pub struct DumpWriter {
    out: BufWriter<File>,
}

impl DumpWriter {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    /// Opens an existing dump for appending after cutting off a torn last
    /// line. Returns the index of what was already there.
    pub fn resume(path: impl AsRef<Path>) -> io::Result<(Self, Option<DumpIndex>)> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok((Self::create(path)?, None));
        }
        let index = DumpIndex::open(path)?;
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(index.valid_len)?;
        drop(file);
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((Self { out: BufWriter::new(file) }, Some(index)))
    }

    pub fn write_group<T: Serialize>(&mut self, rows: &[T]) -> io::Result<()> {
        let mut buf = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut buf, row)?;
            buf.push(b'\n');
        }
        self.out.write_all(&buf)?;
        self.out.flush()
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_all()
    }
}
