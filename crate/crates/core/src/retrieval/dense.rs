//! Exhaustive inner-product search over cached unit vectors.
//!
//! On disk: `vectors.f32` holds `passage_count × dimension` little-endian f32
//! values in passage order, described by `meta.json` ([`EmbeddingMeta`]).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rank_scored, RankedPassage};
use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::util;

pub const VECTORS_FILE: &str = "vectors.f32";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub model_id: String,
    pub dimension: usize,
    pub passage_ids: Vec<String>,
    pub corpus_hash: String,
}

#[derive(Debug, Clone)]
pub struct DenseIndex {
    meta: EmbeddingMeta,
    vectors: Vec<f32>,
    row_of: HashMap<String, usize>,
}

impl DenseIndex {
    /// Embeds every passage (title + text) through `embedder`.
    pub fn build(store: &PassageStore, embedder: &LlmClient) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::InvalidInput("cannot embed an empty corpus".into()));
        }
        let texts: Vec<String> = store.passages().iter().map(|p| p.searchable_text()).collect();
        let embedded = embedder
            .embed(&texts)
            .map_err(|e| Error::RetrieverUnavailable(format!("embedding corpus: {e}")))?;
        let dimension = embedded.first().map_or(0, Vec::len);
        let meta = EmbeddingMeta {
            model_id: embedder.identity(),
            dimension,
            passage_ids: store.passages().iter().map(|p| p.id.clone()).collect(),
            corpus_hash: store.manifest().content_hash.clone(),
        };
        Self::from_parts(meta, embedded.into_iter().flatten().collect())
    }

    pub fn from_parts(meta: EmbeddingMeta, vectors: Vec<f32>) -> Result<Self> {
        if vectors.len() != meta.passage_ids.len() * meta.dimension {
            return Err(Error::Config(format!(
                "embedding cache holds {} floats, expected {} × {}",
                vectors.len(),
                meta.passage_ids.len(),
                meta.dimension
            )));
        }
        let row_of = meta
            .passage_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Self {
            meta,
            vectors,
            row_of,
        })
    }

    pub fn meta(&self) -> &EmbeddingMeta {
        &self.meta
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(VECTORS_FILE);
        util::write_atomic(&path, |w| {
            use std::io::Write;
            for x in &self.vectors {
                w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        })?;
        util::write_json_pretty(&dir.join(META_FILE), &self.meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        if !meta_path.exists() {
            return Err(Error::NotFound(format!("embedding cache {}", dir.display())));
        }
        let meta: EmbeddingMeta = util::read_json(&meta_path)?;
        let path = dir.join(VECTORS_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Config(format!("{} is not a whole number of f32", path.display())));
        }
        let vectors = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_parts(meta, vectors)
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.meta.dimension..(i + 1) * self.meta.dimension]
    }

    fn check_dim(&self, query: &[f32]) -> Result<()> {
        if query.len() != self.meta.dimension {
            return Err(Error::Config(format!(
                "query embedding has dimension {}, cache has {}",
                query.len(),
                self.meta.dimension
            )));
        }
        Ok(())
    }

    pub fn search_vector(&self, query: &[f32], top_n: usize) -> Result<Vec<RankedPassage>> {
        self.check_dim(query)?;
        let scored = self
            .meta
            .passage_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), dot(query, self.row(i))))
            .collect();
        Ok(rank_scored(scored, top_n))
    }

    pub fn score_ids(&self, query: &[f32], ids: &[&str]) -> Result<Vec<(String, f64)>> {
        self.check_dim(query)?;
        ids.iter()
            .map(|id| {
                let row = *self
                    .row_of
                    .get(*id)
                    .ok_or_else(|| Error::NotFound(format!("passage `{id}` not in embedding cache")))?;
                Ok((id.to_string(), dot(query, self.row(row))))
            })
            .collect()
    }
}

/// Inner product accumulated in f64 so rankings do not depend on f32 rounding order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}
