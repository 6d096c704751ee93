//! Content-addressed image storage with a metadata catalog.
//!
//! Blobs are named by the SHA-256 of their bytes, so identical images are
//! stored once no matter how many catalog rows point at them. Reads re-hash
//! the blob and refuse to return bytes that no longer match their name.

mod blob;
mod catalog;

use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use blob::{BlobBackend, FsBlobs, MemoryBlobs};
pub use catalog::{Catalog, TableCatalog};

use crate::clock::SharedClock;

const LOCK_STRIPES: usize = 16;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("bytes are not a decodable PNG, JPEG or WebP image")]
    UndecodableImage,
    #[error("storage is full")]
    StorageFull,
    #[error("catalog write failed: {0}")]
    CatalogWriteFailed(String),
    #[error("image `{0}` not found")]
    NotFound(String),
    #[error("blob `{0}` does not match its content hash")]
    CorruptBlob(String),
    #[error("job `{job_id}` already has a different image at index {image_index}")]
    DuplicateEntry { job_id: String, image_index: u32 },
    #[error("storage I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Lowercase hex SHA-256 of the blob.
    pub image_id: String,
    pub byte_len: u64,
    pub media_type: String,
    pub model_id: String,
    pub session_id: String,
    pub job_id: String,
    pub image_index: u32,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMetadata {
    pub model_id: String,
    pub session_id: String,
    pub job_id: String,
    pub image_index: u32,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct SweepReport {
    pub rows_checked: usize,
    pub blobs_checked: usize,
    /// Catalog rows whose blob is missing.
    pub dangling: Vec<ImageRecord>,
    /// Blob ids whose bytes no longer hash to the id.
    pub corrupt: Vec<String>,
}

impl SweepReport {
    pub fn is_clean(&self) -> bool {
        self.dangling.is_empty() && self.corrupt.is_empty()
    }
}

pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Returns the MIME type of a supported raster image, or `None` when the
/// bytes are empty, of another format, or fail to decode.
pub fn sniff_media_type(bytes: &[u8]) -> Option<&'static str> {
    if bytes.is_empty() {
        return None;
    }
    let format = image::guess_format(bytes).ok()?;
    let media = match format {
        image::ImageFormat::Png => "image/png",
        image::ImageFormat::Jpeg => "image/jpeg",
        image::ImageFormat::WebP => "image/webp",
        _ => return None,
    };
    image::load_from_memory_with_format(bytes, format).ok()?;
    Some(media)
}

pub struct ImageStore {
    blobs: Arc<dyn BlobBackend>,
    catalog: Arc<dyn Catalog>,
    clock: SharedClock,
    model_order: Vec<String>,
    stripes: Vec<Mutex<()>>,
}

impl std::fmt::Debug for ImageStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageStore")
            .field("model_order", &self.model_order)
            .finish_non_exhaustive()
    }
}

impl ImageStore {
    pub fn new(blobs: Arc<dyn BlobBackend>, catalog: Arc<dyn Catalog>, clock: SharedClock) -> Self {
        Self {
            blobs,
            catalog,
            clock,
            model_order: Vec::new(),
            stripes: (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect(),
        }
    }

    pub fn in_memory(clock: SharedClock) -> Self {
        Self::new(
            Arc::new(MemoryBlobs::new()),
            Arc::new(TableCatalog::in_memory()),
            clock,
        )
    }

    /// Filesystem blobs under `root/blobs` and the catalog at `root/catalog.jsonl`.
    pub fn open_dir(root: &Path, clock: SharedClock) -> Result<Self, StoreError> {
        Ok(Self::new(
            Arc::new(FsBlobs::open(root)?),
            Arc::new(TableCatalog::open(root.join("catalog.jsonl"))?),
            clock,
        ))
    }

    /// Model order used by [`ImageStore::query_by_session`]; models not listed
    /// sort after these, by id.
    pub fn with_model_order(mut self, order: Vec<String>) -> Self {
        self.model_order = order;
        self
    }

    fn stripe(&self, id: &str) -> &Mutex<()> {
        let b = u8::from_str_radix(id.get(0..2).unwrap_or("00"), 16).unwrap_or(0);
        &self.stripes[b as usize % LOCK_STRIPES]
    }

    pub fn put(&self, bytes: &[u8], meta: ImageMetadata) -> Result<ImageRecord, StoreError> {
        let media_type = sniff_media_type(bytes).ok_or(StoreError::UndecodableImage)?;
        let image_id = content_id(bytes);
        let record = ImageRecord {
            image_id: image_id.clone(),
            byte_len: bytes.len() as u64,
            media_type: media_type.to_string(),
            model_id: meta.model_id,
            session_id: meta.session_id,
            job_id: meta.job_id,
            image_index: meta.image_index,
            created_at: self.clock.now(),
        };

        // Blob creation and the first catalog row for a hash happen under the
        // same stripe lock, so a failed catalog write can remove the blob
        // without racing a concurrent writer of the same bytes.
        let _guard = self.stripe(&image_id).lock();
        let created = self.blobs.put_if_absent(&image_id, bytes)?;
        match self.catalog.insert(record) {
            Ok(stored) => Ok(stored),
            Err(e) => {
                if created && self.catalog.by_image(&image_id).is_empty() {
                    let _ = self.blobs.delete(&image_id);
                }
                Err(match e {
                    StoreError::DuplicateEntry { .. } => e,
                    StoreError::CatalogWriteFailed(_) => e,
                    other => StoreError::CatalogWriteFailed(other.to_string()),
                })
            }
        }
    }

    pub fn get(&self, image_id: &str) -> Result<Vec<u8>, StoreError> {
        let bytes = self
            .blobs
            .get(image_id)?
            .ok_or_else(|| StoreError::NotFound(image_id.to_string()))?;
        if content_id(&bytes) != image_id {
            return Err(StoreError::CorruptBlob(image_id.to_string()));
        }
        Ok(bytes)
    }

    /// Any catalog row for the image, used to recover its media type.
    pub fn record(&self, image_id: &str) -> Option<ImageRecord> {
        self.catalog.by_image(image_id).into_iter().next()
    }

    /// Every catalog row referencing the image.
    pub fn records_for_image(&self, image_id: &str) -> Vec<ImageRecord> {
        self.catalog.by_image(image_id)
    }

    /// Rows for a session ordered by model (store model order), then
    /// `image_index`.
    pub fn query_by_session(&self, session_id: &str) -> Vec<ImageRecord> {
        let mut rows = self.catalog.by_session(session_id);
        rows.sort_by(|a, b| {
            self.model_rank(&a.model_id)
                .cmp(&self.model_rank(&b.model_id))
                .then(a.image_index.cmp(&b.image_index))
                .then(a.job_id.cmp(&b.job_id))
        });
        rows
    }

    pub fn query_by_job(&self, job_id: &str) -> Vec<ImageRecord> {
        self.catalog.by_job(job_id)
    }

    fn model_rank<'a>(&self, model_id: &'a str) -> (usize, &'a str) {
        (
            self.model_order
                .iter()
                .position(|m| m == model_id)
                .unwrap_or(usize::MAX),
            model_id,
        )
    }

    /// Checks referential integrity and blob hashes across the whole store.
    pub fn sweep(&self) -> Result<SweepReport, StoreError> {
        let rows = self.catalog.all();
        let mut dangling = Vec::new();
        for row in &rows {
            if !self.blobs.contains(&row.image_id)? {
                dangling.push(row.clone());
            }
        }
        let ids = self.blobs.ids()?;
        let verify = |id: &String| -> Option<String> {
            match self.blobs.get(id) {
                Ok(Some(bytes)) if content_id(&bytes) == *id => None,
                Ok(None) => None,
                _ => Some(id.clone()),
            }
        };
        #[cfg(feature = "parallel")]
        let mut corrupt: Vec<String> = {
            use rayon::prelude::*;
            ids.par_iter().filter_map(verify).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let mut corrupt: Vec<String> = ids.iter().filter_map(verify).collect();
        corrupt.sort();
        Ok(SweepReport {
            rows_checked: rows.len(),
            blobs_checked: ids.len(),
            dangling,
            corrupt,
        })
    }

    /// Drops a session's catalog rows and any blob no longer referenced.
    pub fn remove_session(&self, session_id: &str) -> Result<usize, StoreError> {
        let removed = self.catalog.remove_session(session_id)?;
        for rec in &removed {
            let _guard = self.stripe(&rec.image_id).lock();
            if self.catalog.by_image(&rec.image_id).is_empty() {
                self.blobs.delete(&rec.image_id)?;
            }
        }
        Ok(removed.len())
    }
}
