//! Append-only JSON-lines files.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::time::{iso, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("store {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

pub struct JsonLog<T> {
    path: PathBuf,
    file: File,
    _records: PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> JsonLog<T> {
    /// Open or create `path` and read back what it holds. A torn final
    /// line from an interrupted write is dropped; damage anywhere else is
    /// an error.
    pub fn open(path: &Path) -> Result<(Self, Vec<T>), StoreError> {
        let io = |e| StoreError::Io { path: path.into(), source: e };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut records = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(path).map_err(io)?).lines().collect::<Result<_, _>>().map_err(io)?;
            for (i, line) in lines.iter().enumerate() {
                if line.is_empty() {
                    valid_len += 1;
                    continue;
                }
                match serde_json::from_str(line) {
                    Ok(r) => {
                        records.push(r);
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(_) if i + 1 == lines.len() => break,
                    Err(e) => return Err(StoreError::Corrupt { path: path.into(), line: i + 1, message: e.to_string() }),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if file.metadata().map_err(io)?.len() > valid_len {
            file.set_len(valid_len).map_err(io)?;
        }
        Ok((JsonLog { path: path.into(), file, _records: PhantomData }, records))
    }

    pub fn append(&mut self, record: &T) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("store records serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).and_then(|_| self.file.sync_data()).map_err(|e| StoreError::Io { path: self.path.clone(), source: e })
    }

    /// Replace the file with `records`, atomically.
    pub fn rewrite(&mut self, records: &[T]) -> Result<(), StoreError> {
        let io = |e| StoreError::Io { path: self.path.clone(), source: e };
        let tmp = self.path.with_extension("compact");
        let mut body = String::new();
        for r in records {
            body.push_str(&serde_json::to_string(r).expect("store records serialize"));
            body.push('\n');
        }
        std::fs::write(&tmp, body).map_err(io)?;
        std::fs::rename(&tmp, &self.path).map_err(io)?;
        self.file = OpenOptions::new().append(true).open(&self.path).map_err(io)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub room: String,
    pub granted: bool,
    pub author: String,
    #[serde(with = "iso")]
    pub timestamp: Timestamp,
}

/// Latest record per room, in room order.
pub fn compact_consent(records: &[ConsentRecord]) -> Vec<ConsentRecord> {
    let mut latest = std::collections::BTreeMap::new();
    for r in records {
        latest.insert(r.room.clone(), r.clone());
    }
    latest.into_values().collect()
}
