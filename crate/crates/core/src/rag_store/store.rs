//! Demonstration records and their append-only JSON-lines persistence.
//!
//! File layout: a header line `{"schema":1,"dim":256}` followed by one entry
//! per line. Entries are `add` (a full record), `vote` and `status`
//! amendments; loading folds them in order. Compaction rewrites the file as
//! header plus one `add` line per record.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{Embedding, EMBEDDING_DIM};
use crate::meta_action::Plan;
use crate::model::PromptCache;
use crate::scene::SceneGraph;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Pending,
    Verified,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub verdict: Verdict,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub id: u64,
    pub instruction: String,
    pub scene: SceneGraph,
    pub embedding: Embedding,
    pub prompt_cache: PromptCache,
    pub plan: Plan,
    pub relevant_objects: BTreeSet<String>,
    pub status: RecordStatus,
    #[serde(default)]
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema: u32,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Entry {
    Add { record: PlanRecord },
    Vote { id: u64, vote: Vote },
    Status { id: u64, status: RecordStatus },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unsupported store schema {schema} (dim {dim})")]
    Schema { schema: u32, dim: usize },
    #[error("no record with id {0}")]
    UnknownRecord(u64),
    #[error("embedding has dimension {0}, store expects {EMBEDDING_DIM}")]
    Dimension(usize),
    #[error("refusing to store a zero embedding")]
    ZeroEmbedding,
    #[error("encoding entry: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Default)]
pub struct RecordStore {
    records: Vec<PlanRecord>,
    next_id: u64,
    path: Option<PathBuf>,
}

fn header_line() -> String {
    serde_json::to_string(&Header {
        schema: SCHEMA_VERSION,
        dim: EMBEDDING_DIM,
    })
    .expect("header encodes")
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self {
            records: Vec::new(),
            next_id: 1,
            path: None,
        }
    }

    /// Open (or create) a store file and fold its entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let display = path.display().to_string();
        let io = |source| StoreError::Io {
            path: display.clone(),
            source,
        };
        if !path.exists() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io)?;
            }
            let mut f = File::create(&path).map_err(io)?;
            writeln!(f, "{}", header_line()).map_err(io)?;
            f.sync_all().map_err(io)?;
            let mut s = Self::in_memory();
            s.path = Some(path);
            return Ok(s);
        }
        let text = fs::read_to_string(&path).map_err(io)?;
        let mut s = Self::from_jsonl(&display, &text)?;
        s.path = Some(path);
        Ok(s)
    }

    /// Fold a JSON-lines document (header plus entries) into a store.
    pub fn from_jsonl(source: &str, text: &str) -> Result<Self, StoreError> {
        let corrupt = |line: usize, message: String| StoreError::Corrupt {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| corrupt(1, "missing header".into()))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| corrupt(1, format!("header: {e}")))?;
        if header.schema != SCHEMA_VERSION || header.dim != EMBEDDING_DIM {
            return Err(StoreError::Schema {
                schema: header.schema,
                dim: header.dim,
            });
        }
        let mut store = Self::in_memory();
        for (i, line) in lines {
            let entry: Entry =
                serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
            store
                .apply(entry)
                .map_err(|e| corrupt(i + 1, e.to_string()))?;
        }
        Ok(store)
    }

    fn apply(&mut self, entry: Entry) -> Result<(), StoreError> {
        match entry {
            Entry::Add { record } => {
                if record.embedding.dim() != EMBEDDING_DIM {
                    return Err(StoreError::Dimension(record.embedding.dim()));
                }
                if self.get(record.id).is_some() {
                    return Err(StoreError::Corrupt {
                        path: String::new(),
                        line: 0,
                        message: format!("duplicate record id {}", record.id),
                    });
                }
                self.next_id = self.next_id.max(record.id + 1);
                self.records.push(record);
            }
            Entry::Vote { id, vote } => self.get_mut(id)?.votes.push(vote),
            Entry::Status { id, status } => self.get_mut(id)?.status = status,
        }
        Ok(())
    }

    fn get_mut(&mut self, id: u64) -> Result<&mut PlanRecord, StoreError> {
        self.records
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or(StoreError::UnknownRecord(id))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[PlanRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&PlanRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn verified(&self) -> impl Iterator<Item = &PlanRecord> {
        self.records
            .iter()
            .filter(|r| r.status == RecordStatus::Verified)
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Write the entry durably before touching memory.
    fn persist(&self, entry: &Entry) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let display = path.display().to_string();
        let io = |source| StoreError::Io {
            path: display.clone(),
            source,
        };
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(path).map_err(io)?;
        f.write_all(line.as_bytes()).map_err(io)?;
        f.sync_data().map_err(io)?;
        Ok(())
    }

    /// Append a record, assigning it the next id.
    pub fn insert(&mut self, mut record: PlanRecord) -> Result<u64, StoreError> {
        if record.embedding.dim() != EMBEDDING_DIM {
            return Err(StoreError::Dimension(record.embedding.dim()));
        }
        if record.embedding.is_zero() {
            return Err(StoreError::ZeroEmbedding);
        }
        record.id = self.next_id;
        let entry = Entry::Add { record };
        self.persist(&entry)?;
        let Entry::Add { record } = entry else {
            unreachable!()
        };
        self.next_id += 1;
        let id = record.id;
        self.records.push(record);
        Ok(id)
    }

    pub fn add_vote(&mut self, id: u64, vote: Vote) -> Result<(), StoreError> {
        self.get(id).ok_or(StoreError::UnknownRecord(id))?;
        let entry = Entry::Vote { id, vote };
        self.persist(&entry)?;
        self.apply(entry)
    }

    pub fn set_status(&mut self, id: u64, status: RecordStatus) -> Result<(), StoreError> {
        self.get(id).ok_or(StoreError::UnknownRecord(id))?;
        let entry = Entry::Status { id, status };
        self.persist(&entry)?;
        self.apply(entry)
    }

    /// Compacted document: header plus one `add` line per record.
    pub fn to_jsonl(&self) -> Result<String, StoreError> {
        let mut out = header_line();
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(&Entry::Add {
                record: record.clone(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Rewrite the backing file in compacted form (write-then-rename).
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let Some(path) = self.path.clone() else {
            return Ok(());
        };
        let display = path.display().to_string();
        let io = |source| StoreError::Io {
            path: display.clone(),
            source,
        };
        let tmp = path.with_extension("jsonl.compact");
        {
            let mut f = File::create(&tmp).map_err(io)?;
            f.write_all(self.to_jsonl()?.as_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(&tmp, &path).map_err(io)?;
        Ok(())
    }
}

/// Many readers, one writer. Writes hold the exclusive lock until the entry
/// is on disk, so a returned write is durable and readers always see a
/// consistent snapshot.
#[derive(Debug, Clone)]
pub struct SharedStore {
    inner: Arc<RwLock<RecordStore>>,
}

impl SharedStore {
    pub fn new(store: RecordStore) -> Self {
        Self {
            inner: Arc::new(RwLock::new(store)),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, RecordStore> {
        self.inner.read()
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut RecordStore) -> R) -> R {
        f(&mut self.inner.write())
    }
}
