use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{EvidenceKind, EvidenceRecord, Verdict};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::io;

pub const EVIDENCE_FILE: &str = "evidence.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";

type EvidenceKey = (NodeId, EvidenceKind, usize);

#[derive(Default)]
struct State {
    evidence: BTreeMap<EvidenceKey, EvidenceRecord>,
    verdicts: BTreeMap<NodeId, Verdict>,
}

/// Append-only evidence and verdict store keyed by (node, kind, sample).
/// Appends are serialized; the in-memory index answers cache lookups.
pub struct EvidenceStore {
    dir: PathBuf,
    state: Mutex<State>,
}

/// Reads a JSONL file, tolerating a torn final line left by an interrupted
/// append.
fn load_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let lines: Vec<String> = BufReader::new(io::open(path)?)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: dropping torn last line: {e}", path.display());
            }
            Err(e) => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(&line).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

impl EvidenceStore {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut state = State::default();
        for rec in load_lines::<EvidenceRecord>(&dir.join(EVIDENCE_FILE))? {
            rec.validate()?;
            state.evidence.insert(rec.key(), rec);
        }
        for v in load_lines::<Verdict>(&dir.join(VERDICTS_FILE))? {
            state.verdicts.insert(v.node_id, v);
        }
        Ok(EvidenceStore {
            dir: dir.to_path_buf(),
            state: Mutex::new(state),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn evidence_record(&self, node: NodeId, kind: EvidenceKind, sample: usize) -> Option<EvidenceRecord> {
        self.lock().evidence.get(&(node, kind, sample)).cloned()
    }

    pub fn verdict(&self, node: NodeId) -> Option<Verdict> {
        self.lock().verdicts.get(&node).cloned()
    }

    pub fn append_evidence(&self, rec: EvidenceRecord) -> Result<()> {
        rec.validate()?;
        let mut state = self.lock();
        append_line(&self.dir.join(EVIDENCE_FILE), &rec)?;
        state.evidence.insert(rec.key(), rec);
        Ok(())
    }

    pub fn append_verdict(&self, v: Verdict) -> Result<()> {
        let mut state = self.lock();
        append_line(&self.dir.join(VERDICTS_FILE), &v)?;
        state.verdicts.insert(v.node_id, v);
        Ok(())
    }

    /// All evidence records in key order.
    pub fn evidence(&self) -> Vec<EvidenceRecord> {
        self.lock().evidence.values().cloned().collect()
    }

    /// All verdicts in node order.
    pub fn verdicts(&self) -> Vec<Verdict> {
        self.lock().verdicts.values().cloned().collect()
    }

    /// Rewrites both files in key order, dropping superseded duplicates, so
    /// a finished store is byte-identical regardless of completion order.
    pub fn compact(&self) -> Result<()> {
        let state = self.lock();
        io::write_jsonl(&self.dir.join(EVIDENCE_FILE), state.evidence.values())?;
        io::write_jsonl(&self.dir.join(VERDICTS_FILE), state.verdicts.values())
    }
}
