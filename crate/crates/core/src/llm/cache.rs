//! Append-only on-disk cache of backend responses, keyed by request hash.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::TokenProb;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Cached {
    Text { text: String },
    Distribution { distribution: Option<Vec<TokenProb>> },
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: String,
    #[serde(flatten)]
    value: Cached,
}

#[derive(Debug)]
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, Cached>>,
}

impl ResponseCache {
    /// Opens (or starts) the cache at `path`. Corrupt trailing lines from an
    /// interrupted write are skipped.
    pub fn open(path: &Path) -> crate::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| crate::Error::io(path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| crate::Error::io(path, e))?;
                if let Ok(l) = serde_json::from_str::<Line>(&line) {
                    entries.insert(l.key, l.value);
                }
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn get_text(&self, key: &str) -> Option<String> {
        match self.entries.lock().unwrap().get(key) {
            Some(Cached::Text { text }) => Some(text.clone()),
            _ => None,
        }
    }

    pub(crate) fn get_distribution(&self, key: &str) -> Option<Option<Vec<TokenProb>>> {
        match self.entries.lock().unwrap().get(key) {
            Some(Cached::Distribution { distribution }) => Some(distribution.clone()),
            _ => None,
        }
    }

    pub(crate) fn put_text(&self, key: &str, text: &str) {
        self.put(
            key,
            Cached::Text {
                text: text.to_string(),
            },
        )
    }

    pub(crate) fn put_distribution(&self, key: &str, distribution: &Option<Vec<TokenProb>>) {
        self.put(
            key,
            Cached::Distribution {
                distribution: distribution.clone(),
            },
        )
    }

    fn put(&self, key: &str, value: Cached) {
        let mut entries = self.entries.lock().unwrap();
        let line = Line {
            key: key.to_string(),
            value: value.clone(),
        };
        // a failed append only costs a repeated call later
        if let Err(e) = self.append(&line) {
            tracing::warn!(error = %e, path = %self.path.display(), "response cache append failed");
        }
        entries.insert(key.to_string(), value);
    }

    fn append(&self, line: &Line) -> std::io::Result<()> {
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let mut buf = serde_json::to_vec(line)?;
        buf.push(b'\n');
        f.write_all(&buf)
    }
}
