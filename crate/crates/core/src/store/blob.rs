use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::RwLock;

use super::StoreError;

/// Raw blob persistence keyed by content hash. Implementations never verify
/// hashes themselves; [`super::ImageStore`] does that on read.
pub trait BlobBackend: Send + Sync {
    /// Stores `bytes` under `id` unless already present. Returns `true` when
    /// this call created the blob.
    fn put_if_absent(&self, id: &str, bytes: &[u8]) -> Result<bool, StoreError>;

    fn get(&self, id: &str) -> Result<Option<Vec<u8>>, StoreError>;

    fn contains(&self, id: &str) -> Result<bool, StoreError>;

    fn delete(&self, id: &str) -> Result<(), StoreError>;

    fn ids(&self) -> Result<Vec<String>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryBlobs {
    blobs: RwLock<HashMap<String, Vec<u8>>>,
    capacity_bytes: Option<usize>,
}

impl MemoryBlobs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_bytes(capacity: usize) -> Self {
        Self {
            blobs: RwLock::default(),
            capacity_bytes: Some(capacity),
        }
    }

    /// Overwrites a stored blob in place, bypassing content addressing.
    /// Test hook for corruption scenarios.
    pub fn tamper(&self, id: &str, f: impl FnOnce(&mut Vec<u8>)) {
        if let Some(bytes) = self.blobs.write().get_mut(id) {
            f(bytes);
        }
    }
}

impl BlobBackend for MemoryBlobs {
    fn put_if_absent(&self, id: &str, bytes: &[u8]) -> Result<bool, StoreError> {
        let mut blobs = self.blobs.write();
        if blobs.contains_key(id) {
            return Ok(false);
        }
        if let Some(cap) = self.capacity_bytes {
            let used: usize = blobs.values().map(Vec::len).sum();
            if used + bytes.len() > cap {
                return Err(StoreError::StorageFull);
            }
        }
        blobs.insert(id.to_string(), bytes.to_vec());
        Ok(true)
    }

    fn get(&self, id: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.blobs.read().get(id).cloned())
    }

    fn contains(&self, id: &str) -> Result<bool, StoreError> {
        Ok(self.blobs.read().contains_key(id))
    }

    fn delete(&self, id: &str) -> Result<(), StoreError> {
        self.blobs.write().remove(id);
        Ok(())
    }

    fn ids(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.blobs.read().keys().cloned().collect())
    }
}

/// Blobs as files under `root/blobs/ab/cd/<hash>`. Writes go to a temp file
/// in `root/tmp` and are renamed into place.
#[derive(Debug)]
pub struct FsBlobs {
    root: PathBuf,
}

fn io_err(e: io::Error) -> StoreError {
    if e.kind() == io::ErrorKind::StorageFull {
        StoreError::StorageFull
    } else {
        StoreError::Io(e.to_string())
    }
}

impl FsBlobs {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("blobs")).map_err(io_err)?;
        fs::create_dir_all(root.join("tmp")).map_err(io_err)?;
        Ok(Self { root })
    }

    pub fn blob_path(&self, id: &str) -> PathBuf {
        let (a, b) = if id.len() >= 4 {
            (&id[0..2], &id[2..4])
        } else {
            ("__", "__")
        };
        self.root.join("blobs").join(a).join(b).join(id)
    }

    fn write_atomic(&self, dest: &Path, bytes: &[u8]) -> io::Result<()> {
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = self
            .root
            .join("tmp")
            .join(format!("{}.part", uuid::Uuid::new_v4()));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, dest)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result
    }
}

impl BlobBackend for FsBlobs {
    fn put_if_absent(&self, id: &str, bytes: &[u8]) -> Result<bool, StoreError> {
        let path = self.blob_path(id);
        if path.exists() {
            return Ok(false);
        }
        self.write_atomic(&path, bytes).map_err(io_err)?;
        Ok(true)
    }

    fn get(&self, id: &str) -> Result<Option<Vec<u8>>, StoreError> {
        match fs::read(self.blob_path(id)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(e)),
        }
    }

    fn contains(&self, id: &str) -> Result<bool, StoreError> {
        Ok(self.blob_path(id).is_file())
    }

    fn delete(&self, id: &str) -> Result<(), StoreError> {
        match fs::remove_file(self.blob_path(id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(io_err(e)),
        }
    }

    fn ids(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        let blobs = self.root.join("blobs");
        for a in fs::read_dir(&blobs).map_err(io_err)? {
            let a = a.map_err(io_err)?.path();
            if !a.is_dir() {
                continue;
            }
            for b in fs::read_dir(&a).map_err(io_err)? {
                let b = b.map_err(io_err)?.path();
                if !b.is_dir() {
                    continue;
                }
                for f in fs::read_dir(&b).map_err(io_err)? {
                    let f = f.map_err(io_err)?;
                    if let Some(name) = f.file_name().to_str() {
                        out.push(name.to_string());
                    }
                }
            }
        }
        Ok(out)
    }
}
