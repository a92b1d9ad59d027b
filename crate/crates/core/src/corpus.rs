//! Document ingestion, fixed-size word chunking and the on-disk passage store.
//!
//! A store directory holds `passages.jsonl` (one [`Passage`] per line, in
//! document then chunk order) and `manifest.json` ([`CorpusManifest`]).

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::util;

pub const PASSAGES_FILE: &str = "passages.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub doc_id: String,
    pub chunk_index: usize,
    pub title: String,
    pub text: String,
}

impl Passage {
    pub fn passage_id(doc_id: &str, chunk_index: usize) -> String {
        format!("{doc_id}#{chunk_index}")
    }

    /// Title and body as one string; what retrievers index and what answer
    /// recall scans.
    pub fn searchable_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{} {}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub passage_count: usize,
    pub chunk_size_words: usize,
    pub created_at: DateTime<Utc>,
    pub content_hash: String,
}

/// One line of the corpus input file.
#[derive(Debug, Deserialize)]
struct SourceRecord {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

/// Splits `body` into consecutive runs of `chunk_size_words` words. The last
/// chunk keeps whatever is left over.
pub fn chunk_document(
    doc_id: &str,
    title: &str,
    body: &str,
    chunk_size_words: usize,
) -> Result<Vec<Passage>> {
    if chunk_size_words == 0 {
        return Err(Error::InvalidInput("chunk_size_words must be >= 1".into()));
    }
    let words: Vec<&str> = body.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::InvalidInput(format!(
            "document `{doc_id}` has an empty body"
        )));
    }
    Ok(words
        .chunks(chunk_size_words)
        .enumerate()
        .map(|(chunk_index, chunk)| Passage {
            id: Passage::passage_id(doc_id, chunk_index),
            doc_id: doc_id.to_string(),
            chunk_index,
            title: title.to_string(),
            text: chunk.join(" "),
        })
        .collect())
}

/// Digest over (id, title, text) of every passage, visited in id order.
pub fn content_hash(passages: &[Passage]) -> String {
    let mut refs: Vec<&Passage> = passages.iter().collect();
    refs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut hasher = Sha256::new();
    for p in refs {
        hasher.update(p.id.as_bytes());
        hasher.update([0u8]);
        hasher.update(p.title.as_bytes());
        hasher.update([0u8]);
        hasher.update(p.text.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Reads a JSON-lines document file (`id`, `title`, `text`), chunks every
/// document and writes the passage store plus manifest into `store_dir`.
pub fn ingest(
    source_path: &Path,
    store_dir: &Path,
    chunk_size_words: usize,
    corpus_id: &str,
) -> Result<CorpusManifest> {
    if chunk_size_words == 0 {
        return Err(Error::InvalidInput("chunk_size_words must be >= 1".into()));
    }
    let file = File::open(source_path).map_err(|e| Error::io(source_path, e))?;
    let mut seen_docs = HashSet::new();
    let mut passages = Vec::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(source_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: source_path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: SourceRecord =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if !seen_docs.insert(record.id.clone()) {
            return Err(malformed(format!("duplicate document id `{}`", record.id)));
        }
        let chunks = chunk_document(&record.id, &record.title, &record.text, chunk_size_words)
            .map_err(|e| malformed(e.to_string()))?;
        passages.extend(chunks);
    }

    let manifest = CorpusManifest {
        corpus_id: corpus_id.to_string(),
        passage_count: passages.len(),
        chunk_size_words,
        created_at: Utc::now(),
        content_hash: content_hash(&passages),
    };
    util::write_jsonl(&store_dir.join(PASSAGES_FILE), &passages)?;
    util::write_json_pretty(&store_dir.join(MANIFEST_FILE), &manifest)?;
    tracing::info!(
        passages = manifest.passage_count,
        hash = %manifest.content_hash,
        "ingested corpus"
    );
    Ok(manifest)
}

/// Immutable in-memory view of an ingested corpus.
#[derive(Debug, Clone)]
pub struct PassageStore {
    manifest: CorpusManifest,
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    dir: PathBuf,
}

impl PassageStore {
    pub fn open(store_dir: &Path) -> Result<Self> {
        let manifest_path = store_dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::NotFound(format!(
                "no corpus manifest at {}",
                manifest_path.display()
            )));
        }
        let manifest: CorpusManifest = util::read_json(&manifest_path)?;
        let passages: Vec<Passage> = util::read_jsonl(&store_dir.join(PASSAGES_FILE))?;
        if passages.len() != manifest.passage_count {
            return Err(Error::InvalidInput(format!(
                "manifest lists {} passages but store holds {}",
                manifest.passage_count,
                passages.len()
            )));
        }
        let mut store = Self::from_passages(manifest, passages)?;
        store.dir = store_dir.to_path_buf();
        Ok(store)
    }

    /// Builds a store without touching disk; used by tests and tools that
    /// already hold passages in memory.
    pub fn from_passages(manifest: CorpusManifest, passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate passage id `{}`", p.id)));
            }
        }
        Ok(Self {
            manifest,
            passages,
            by_id,
            dir: PathBuf::new(),
        })
    }

    pub fn in_memory(corpus_id: &str, passages: Vec<Passage>) -> Result<Self> {
        let manifest = CorpusManifest {
            corpus_id: corpus_id.to_string(),
            passage_count: passages.len(),
            chunk_size_words: passages
                .iter()
                .map(|p| p.text.split_whitespace().count())
                .max()
                .unwrap_or(1)
                .max(1),
            created_at: Utc::now(),
            content_hash: content_hash(&passages),
        };
        Self::from_passages(manifest, passages)
    }

    pub fn get_passage(&self, id: &str) -> Result<&Passage> {
        self.by_id
            .get(id)
            .map(|&i| &self.passages[i])
            .ok_or_else(|| Error::NotFound(format!("passage `{id}`")))
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
