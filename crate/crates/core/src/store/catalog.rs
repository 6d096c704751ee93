use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use parking_lot::Mutex;

use super::{ImageRecord, StoreError};

/// Metadata rows describing stored images.
pub trait Catalog: Send + Sync {
    /// Inserts a row. A row with the same `(job_id, image_index)` and the same
    /// `image_id` is accepted as a no-op and the existing row returned.
    fn insert(&self, record: ImageRecord) -> Result<ImageRecord, StoreError>;

    fn by_session(&self, session_id: &str) -> Vec<ImageRecord>;

    fn by_job(&self, job_id: &str) -> Vec<ImageRecord>;

    fn by_image(&self, image_id: &str) -> Vec<ImageRecord>;

    fn all(&self) -> Vec<ImageRecord>;

    /// Deletes every row of a session, returning the removed rows.
    fn remove_session(&self, session_id: &str) -> Result<Vec<ImageRecord>, StoreError>;
}

#[derive(Debug, Default)]
struct Index {
    rows: Vec<Option<ImageRecord>>,
    by_session: HashMap<String, Vec<usize>>,
    by_job: HashMap<String, BTreeMap<u32, usize>>,
    by_image: HashMap<String, Vec<usize>>,
}

impl Index {
    fn add(&mut self, record: ImageRecord) -> Result<ImageRecord, StoreError> {
        if let Some(&row) = self
            .by_job
            .get(&record.job_id)
            .and_then(|m| m.get(&record.image_index))
        {
            let existing = self.rows[row].as_ref().expect("indexed row is live");
            return if existing.image_id == record.image_id {
                Ok(existing.clone())
            } else {
                Err(StoreError::DuplicateEntry {
                    job_id: record.job_id,
                    image_index: record.image_index,
                })
            };
        }
        let row = self.rows.len();
        self.by_session
            .entry(record.session_id.clone())
            .or_default()
            .push(row);
        self.by_job
            .entry(record.job_id.clone())
            .or_default()
            .insert(record.image_index, row);
        self.by_image
            .entry(record.image_id.clone())
            .or_default()
            .push(row);
        self.rows.push(Some(record.clone()));
        Ok(record)
    }

    fn collect(&self, rows: Option<&Vec<usize>>) -> Vec<ImageRecord> {
        rows.map(|rs| rs.iter().filter_map(|&r| self.rows[r].clone()).collect())
            .unwrap_or_default()
    }

    fn would_accept(&self, record: &ImageRecord) -> Result<Option<ImageRecord>, StoreError> {
        match self
            .by_job
            .get(&record.job_id)
            .and_then(|m| m.get(&record.image_index))
        {
            None => Ok(None),
            Some(&row) => {
                let existing = self.rows[row].as_ref().expect("indexed row is live");
                if existing.image_id == record.image_id {
                    Ok(Some(existing.clone()))
                } else {
                    Err(StoreError::DuplicateEntry {
                        job_id: record.job_id.clone(),
                        image_index: record.image_index,
                    })
                }
            }
        }
    }

    fn remove_session(&mut self, session_id: &str) -> Vec<ImageRecord> {
        let Some(rows) = self.by_session.remove(session_id) else {
            return Vec::new();
        };
        let mut removed = Vec::new();
        for r in rows {
            if let Some(rec) = self.rows[r].take() {
                if let Some(m) = self.by_job.get_mut(&rec.job_id) {
                    m.remove(&rec.image_index);
                    if m.is_empty() {
                        self.by_job.remove(&rec.job_id);
                    }
                }
                if let Some(v) = self.by_image.get_mut(&rec.image_id) {
                    v.retain(|&x| x != r);
                    if v.is_empty() {
                        self.by_image.remove(&rec.image_id);
                    }
                }
                removed.push(rec);
            }
        }
        removed
    }

    fn live(&self) -> impl Iterator<Item = &ImageRecord> {
        self.rows.iter().flatten()
    }
}

/// Catalog held in memory, optionally backed by a single JSON-lines file.
/// Rows are appended as they are inserted; removals rewrite the file.
#[derive(Debug)]
pub struct TableCatalog {
    index: Mutex<Index>,
    path: Option<PathBuf>,
}

impl TableCatalog {
    pub fn in_memory() -> Self {
        Self {
            index: Mutex::new(Index::default()),
            path: None,
        }
    }

    /// Opens (or creates) the catalog file and loads its rows.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        let mut index = Index::default();
        if path.exists() {
            let file = File::open(&path).map_err(|e| StoreError::Io(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| StoreError::Io(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ImageRecord = serde_json::from_str(&line)
                    .map_err(|e| StoreError::CatalogWriteFailed(format!("corrupt catalog: {e}")))?;
                index.add(rec)?;
            }
        }
        Ok(Self {
            index: Mutex::new(index),
            path: Some(path),
        })
    }

    fn append(&self, record: &ImageRecord) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut line = serde_json::to_string(record)
            .map_err(|e| StoreError::CatalogWriteFailed(e.to_string()))?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StoreError::CatalogWriteFailed(e.to_string()))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| StoreError::CatalogWriteFailed(e.to_string()))
    }

    fn rewrite(&self, index: &Index) -> Result<(), StoreError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let tmp = path.with_extension("jsonl.tmp");
        let mut buf = String::new();
        for rec in index.live() {
            buf.push_str(
                &serde_json::to_string(rec)
                    .map_err(|e| StoreError::CatalogWriteFailed(e.to_string()))?,
            );
            buf.push('\n');
        }
        fs::write(&tmp, buf)
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| StoreError::CatalogWriteFailed(e.to_string()))
    }
}

impl Catalog for TableCatalog {
    fn insert(&self, record: ImageRecord) -> Result<ImageRecord, StoreError> {
        let mut index = self.index.lock();
        if let Some(existing) = index.would_accept(&record)? {
            return Ok(existing);
        }
        self.append(&record)?;
        index.add(record)
    }

    fn by_session(&self, session_id: &str) -> Vec<ImageRecord> {
        let index = self.index.lock();
        index.collect(index.by_session.get(session_id))
    }

    fn by_job(&self, job_id: &str) -> Vec<ImageRecord> {
        let index = self.index.lock();
        index
            .by_job
            .get(job_id)
            .map(|m| m.values().filter_map(|&r| index.rows[r].clone()).collect())
            .unwrap_or_default()
    }

    fn by_image(&self, image_id: &str) -> Vec<ImageRecord> {
        let index = self.index.lock();
        index.collect(index.by_image.get(image_id))
    }

    fn all(&self) -> Vec<ImageRecord> {
        self.index.lock().live().cloned().collect()
    }

    fn remove_session(&self, session_id: &str) -> Result<Vec<ImageRecord>, StoreError> {
        let mut index = self.index.lock();
        let removed = index.remove_session(session_id);
        if !removed.is_empty() {
            self.rewrite(&index)?;
        }
        Ok(removed)
    }
}
