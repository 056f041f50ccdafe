//! Append-only record of successful completions, keyed by request
//! fingerprint. Re-running an interrupted job against the same file replays
//! finished calls and only sends the rest.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::CompletionResult;

#[derive(Serialize, Deserialize)]
struct Entry {
    fingerprint: String,
    result: CompletionResult,
}

pub struct ResponseCache {
    inner: Mutex<Inner>,
}

struct Inner {
    entries: HashMap<String, CompletionResult>,
    file: File,
}

impl ResponseCache {
    /// Load `path` if present (skipping torn lines) and open it for append.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                if let Ok(e) = serde_json::from_str::<Entry>(&line?) {
                    entries.insert(e.fingerprint, e.result);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(Inner { entries, file }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<CompletionResult> {
        self.inner.lock().unwrap().entries.get(fingerprint).cloned()
    }

    pub fn put(&self, fingerprint: &str, result: &CompletionResult) -> std::io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        let mut line = serde_json::to_vec(&Entry {
            fingerprint: fingerprint.to_string(),
            result: result.clone(),
        })?;
        line.push(b'\n');
        inner.file.write_all(&line)?;
        inner.file.flush()?;
        inner.entries.insert(fingerprint.to_string(), result.clone());
        Ok(())
    }
}
