//! Append-only moderation log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::layout::ensure_parent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Flag,
    Allow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub meme_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// Position in the log, from 0.
    pub seq: u64,
    pub meme_id: String,
    pub verdict: Verdict,
    pub note: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

pub struct DecisionLog {
    path: PathBuf,
    inner: Mutex<(File, u64)>,
}

impl DecisionLog {
    /// Opens (or creates) the log for appending, continuing its sequence.
    pub fn open(path: &Path) -> Result<Self> {
        let existing = if path.exists() { replay(path)?.len() as u64 } else { 0 };
        ensure_parent(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: Mutex::new((file, existing)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line per record; concurrent callers are serialized.
    pub fn append(&self, req: DecisionRequest) -> Result<DecisionRecord> {
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let record = DecisionRecord {
            seq: guard.1,
            meme_id: req.meme_id,
            verdict: req.verdict,
            note: req.note,
            timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        };
        let line = serde_json::to_string(&record)? + "\n";
        guard.0.write_all(line.as_bytes())?;
        guard.0.flush()?;
        guard.1 += 1;
        Ok(record)
    }
}

/// Every record in log order.
pub fn replay(path: &Path) -> Result<Vec<DecisionRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DecisionRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        if rec.seq != out.len() as u64 {
            bail!("{}:{}: sequence {} out of order", path.display(), n + 1, rec.seq);
        }
        out.push(rec);
    }
    Ok(out)
}

/// Latest verdict per meme after replaying `records` in order.
pub fn current_verdicts(records: &[DecisionRecord]) -> BTreeMap<String, Verdict> {
    records.iter().map(|r| (r.meme_id.clone(), r.verdict)).collect()
}
