use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::BattleRecord;

/// Append-only JSON-lines battle log. The in-memory copy is owned by the
/// arena; this type only handles the file.
#[derive(Debug)]
pub struct BattleLog {
    path: Option<PathBuf>,
    file: Option<File>,
}

impl BattleLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: None,
        }
    }

    /// Opens (creating if needed) a log file and returns the records in it. A
    /// torn final line from an interrupted append is dropped from the file.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<(Self, Vec<BattleRecord>)> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut records = Vec::new();
        let mut rewrite = false;
        if path.exists() {
            let raw = std::fs::read(&path)?;
            rewrite = !raw.is_empty() && !raw.ends_with(b"\n");
            let lines: Vec<String> = BufReader::new(raw.as_slice())
                .lines()
                .collect::<Result<_, _>>()?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(line) {
                    Ok(r) => records.push(r),
                    Err(e) if i == last => {
                        tracing::warn!(error = %e, "dropping torn last line of battle log");
                        rewrite = true;
                    }
                    Err(e) => {
                        return Err(std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("{}:{}: {e}", path.display(), i + 1),
                        ))
                    }
                }
            }
        }
        if rewrite {
            let mut text = Vec::new();
            for r in &records {
                serde_json::to_writer(&mut text, r).map_err(std::io::Error::other)?;
                text.push(b'\n');
            }
            let tmp = path.with_extension("jsonl.tmp");
            std::fs::write(&tmp, text)?;
            std::fs::rename(&tmp, &path)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((
            Self {
                path: Some(path),
                file: Some(file),
            },
            records,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&mut self, record: &BattleRecord) -> std::io::Result<()> {
        let Some(file) = self.file.as_mut() else {
            return Ok(());
        };
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()
    }
}
