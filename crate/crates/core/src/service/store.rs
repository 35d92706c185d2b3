use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{ExpertResponse, ServiceError};

/// Append-only JSON Lines file of accepted responses.
///
/// Every append is flushed with `fsync` before it returns, so a response is
/// durable by the time the caller acknowledges it. A torn final line (a
/// crash mid-write, before any acknowledgment) is dropped on open.
#[derive(Debug)]
pub struct ResponseStore {
    path: PathBuf,
    file: File,
    /// Length of the file up to the last complete record.
    len: u64,
    records: Vec<ExpertResponse>,
}

impl ResponseStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| ServiceError::Io { path: path.clone(), source };
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;

        let mut records = Vec::new();
        let mut good_len = 0;
        for (i, line) in text.split_inclusive('\n').enumerate() {
            // Only the last line can lack a newline; it was never acknowledged.
            if !line.ends_with('\n') {
                log::warn!("{}: dropping torn final line", path.display());
                break;
            }
            let body = line.trim_end();
            if !body.is_empty() {
                let r = serde_json::from_str::<ExpertResponse>(body).map_err(|e| ServiceError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    detail: e.to_string(),
                })?;
                records.push(r);
            }
            good_len += line.len();
        }
        if good_len < text.len() {
            file.set_len(good_len as u64).map_err(io)?;
        }
        Ok(ResponseStore { path, file, len: good_len as u64, records })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[ExpertResponse] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends and syncs one record.
    pub fn append(&mut self, r: &ExpertResponse) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(r).expect("response serializes");
        line.push(b'\n');
        let io = |source| ServiceError::Io { path: self.path.clone(), source };
        if let Err(e) = self.file.write_all(&line).and_then(|()| self.file.sync_data()) {
            // Roll back a partial line so later appends stay parseable.
            let _ = self.file.set_len(self.len);
            return Err(io(e));
        }
        self.len += line.len() as u64;
        self.records.push(r.clone());
        Ok(())
    }

    /// Every record once, ordered by participant and then submission order.
    pub fn export_jsonl(&self) -> String {
        let mut sorted: Vec<&ExpertResponse> = self.records.iter().collect();
        sorted.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
        let mut out = String::new();
        for r in sorted {
            out.push_str(&serde_json::to_string(r).expect("response serializes"));
            out.push('\n');
        }
        out
    }
}
