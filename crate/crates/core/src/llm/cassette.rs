//! Record/replay of LLM sessions as line-delimited JSON.
//!
//! Recordings are keyed by `(fingerprint, seed)`. Repeated identical
//! prompts in one run (the repetition calls of a branch) carry distinct
//! seeds, so replay does not depend on call order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{GenerationParams, LlmBackend, LlmError};
use crate::prompts::{Fingerprint, Prompt};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRecord {
    pub fingerprint: Fingerprint,
    pub seed: u64,
    pub template: String,
    pub prompt: String,
    pub reply: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CassetteMode {
    /// Forward to the inner backend and append every exchange.
    Record,
    /// Exact `(fingerprint, seed)` match or error.
    Strict,
    /// Exact match, else any recording with the same fingerprint, else the
    /// inner backend when one is configured.
    Permissive,
}

pub struct CassetteBackend {
    mode: CassetteMode,
    exact: HashMap<(Fingerprint, u64), String>,
    by_fingerprint: HashMap<Fingerprint, String>,
    inner: Option<Box<dyn LlmBackend>>,
    sink: Option<Mutex<File>>,
}

impl CassetteBackend {
    /// Replays recordings loaded from `path`.
    pub fn replay(path: &Path, mode: CassetteMode, inner: Option<Box<dyn LlmBackend>>) -> Result<Self, LlmError> {
        let file = File::open(path).map_err(|e| LlmError::CassetteIo(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::CassetteIo(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CassetteRecord =
                serde_json::from_str(&line).map_err(|e| LlmError::CassetteIo(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(rec);
        }
        Ok(Self::from_records(records, mode, inner))
    }

    pub fn from_records(records: Vec<CassetteRecord>, mode: CassetteMode, inner: Option<Box<dyn LlmBackend>>) -> Self {
        let mut exact = HashMap::new();
        let mut by_fingerprint: HashMap<Fingerprint, (u64, String)> = HashMap::new();
        for r in records {
            let keep = by_fingerprint.get(&r.fingerprint).is_none_or(|(s, _)| r.seed < *s);
            if keep {
                by_fingerprint.insert(r.fingerprint.clone(), (r.seed, r.reply.clone()));
            }
            exact.insert((r.fingerprint, r.seed), r.reply);
        }
        let by_fingerprint = by_fingerprint.into_iter().map(|(k, (_, v))| (k, v)).collect();
        Self { mode: if mode == CassetteMode::Record { CassetteMode::Strict } else { mode }, exact, by_fingerprint, inner, sink: None }
    }

    /// Forwards to `inner` and appends each exchange to `path`.
    pub fn record(path: &Path, inner: Box<dyn LlmBackend>) -> Result<Self, LlmError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::CassetteIo(format!("{}: {e}", path.display())))?;
        Ok(Self {
            mode: CassetteMode::Record,
            exact: HashMap::new(),
            by_fingerprint: HashMap::new(),
            inner: Some(inner),
            sink: Some(Mutex::new(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.exact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }
}

impl LlmBackend for CassetteBackend {
    fn name(&self) -> &str {
        "cassette"
    }

    fn complete(&self, prompt: &Prompt, params: &GenerationParams, seed: u64) -> Result<String, LlmError> {
        let fp = prompt.fingerprint();
        let miss = || LlmError::CassetteMiss { template: prompt.template.to_string(), fingerprint: fp.clone(), seed };
        match self.mode {
            CassetteMode::Record => {
                let inner = self.inner.as_ref().ok_or_else(miss)?;
                let reply = inner.complete(prompt, params, seed)?;
                let rec = CassetteRecord {
                    fingerprint: fp.clone(),
                    seed,
                    template: prompt.template.to_string(),
                    prompt: prompt.text.clone(),
                    reply: reply.clone(),
                };
                let line = serde_json::to_string(&rec).map_err(|e| LlmError::CassetteIo(e.to_string()))?;
                if let Some(sink) = &self.sink {
                    let mut f = sink.lock().unwrap();
                    writeln!(f, "{line}").map_err(|e| LlmError::CassetteIo(e.to_string()))?;
                }
                Ok(reply)
            }
            CassetteMode::Strict => self.exact.get(&(fp.clone(), seed)).cloned().ok_or_else(miss),
            CassetteMode::Permissive => {
                if let Some(r) = self.exact.get(&(fp.clone(), seed)).or_else(|| self.by_fingerprint.get(&fp)) {
                    return Ok(r.clone());
                }
                match &self.inner {
                    Some(inner) => inner.complete(prompt, params, seed),
                    None => Err(miss()),
                }
            }
        }
    }
}
