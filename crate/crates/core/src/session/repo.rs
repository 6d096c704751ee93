use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use parking_lot::Mutex;

use super::AuditSession;

/// Write-through persistence for sessions, one JSON document each.
pub trait SessionRepo: Send + Sync {
    fn save(&self, session: &AuditSession) -> Result<(), String>;
    fn delete(&self, session_id: &str) -> Result<(), String>;
    fn load_all(&self) -> Result<Vec<AuditSession>, String>;
}

/// Keeps the serialized documents in memory.
#[derive(Debug, Default)]
pub struct MemorySessionRepo {
    docs: Mutex<HashMap<String, Vec<u8>>>,
}

impl MemorySessionRepo {
    pub fn new() -> Self {
        Self::default()
    }

    /// The last persisted document for a session.
    pub fn document(&self, session_id: &str) -> Option<Vec<u8>> {
        self.docs.lock().get(session_id).cloned()
    }
}

impl SessionRepo for MemorySessionRepo {
    fn save(&self, session: &AuditSession) -> Result<(), String> {
        let bytes = serde_json::to_vec_pretty(session).map_err(|e| e.to_string())?;
        self.docs.lock().insert(session.session_id.clone(), bytes);
        Ok(())
    }

    fn delete(&self, session_id: &str) -> Result<(), String> {
        self.docs.lock().remove(session_id);
        Ok(())
    }

    fn load_all(&self) -> Result<Vec<AuditSession>, String> {
        self.docs
            .lock()
            .values()
            .map(|b| serde_json::from_slice(b).map_err(|e| e.to_string()))
            .collect()
    }
}

/// `<dir>/<session_id>.json`, replaced atomically on every save.
#[derive(Debug)]
pub struct DirSessionRepo {
    dir: PathBuf,
}

impl DirSessionRepo {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.json"))
    }
}

impl SessionRepo for DirSessionRepo {
    fn save(&self, session: &AuditSession) -> Result<(), String> {
        let bytes = serde_json::to_vec_pretty(session).map_err(|e| e.to_string())?;
        let path = self.path(&session.session_id);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| e.to_string())
    }

    fn delete(&self, session_id: &str) -> Result<(), String> {
        match fs::remove_file(self.path(session_id)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.to_string()),
        }
    }

    fn load_all(&self) -> Result<Vec<AuditSession>, String> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| e.to_string())?;
            out.push(
                serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?,
            );
        }
        Ok(out)
    }
}
