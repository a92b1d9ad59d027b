//! Sparse (BM25), dense (embedding) and fused (reciprocal rank fusion)
//! retrieval, per-question passage pools and in-pool re-scoring.
//!
//! Every ranked list produced here has gap-free 1-based ranks, non-increasing
//! scores, and ties broken by ascending passage id.

mod bm25;
mod dense;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bm25::{Bm25Index, Bm25Params};
pub use dense::{dot, DenseIndex, EmbeddingMeta, META_FILE, VECTORS_FILE};

use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::llm::LlmClient;
use crate::reader::Question;
use crate::util;

/// Lowercase, split on anything that is not alphanumeric. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPassage {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
    pub vocabulary_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Sparse,
    Dense,
    Fused,
}

impl RetrieverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Sparse => "sparse",
            RetrieverKind::Dense => "dense",
            RetrieverKind::Fused => "fused",
        }
    }

    pub fn needs_sparse(self) -> bool {
        matches!(self, RetrieverKind::Sparse | RetrieverKind::Fused)
    }

    pub fn needs_dense(self) -> bool {
        matches!(self, RetrieverKind::Dense | RetrieverKind::Fused)
    }
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetrieverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(RetrieverKind::Sparse),
            "dense" => Ok(RetrieverKind::Dense),
            "fused" => Ok(RetrieverKind::Fused),
            other => Err(Error::Config(format!("unknown retriever kind `{other}`"))),
        }
    }
}

/// Sorts `(id, score)` pairs by score descending then id ascending, keeps
/// `top_n` and assigns ranks.
pub fn rank_scored(mut scored: Vec<(String, f64)>, top_n: usize) -> Vec<RankedPassage> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top_n);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (passage_id, score))| RankedPassage {
            passage_id,
            score,
            rank: i + 1,
        })
        .collect()
}

/// Result of fusing several lists: the fused ranking plus, for every passage,
/// its rank in each input list (`None` where absent).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRanking {
    pub ranked: Vec<RankedPassage>,
    pub input_ranks: BTreeMap<String, Vec<Option<usize>>>,
}

/// Reciprocal rank fusion: `score(p) = Σ_lists 1 / (k_rrf + rank_list(p))`.
/// A passage repeated within one list counts once, at its best rank.
pub fn rrf_fuse(lists: &[&[RankedPassage]], k_rrf: u32) -> Result<FusedRanking> {
    if lists.len() < 2 {
        return Err(Error::InvalidInput(
            "rrf_fuse needs at least two ranked lists".into(),
        ));
    }
    if k_rrf == 0 {
        return Err(Error::InvalidInput("k_rrf must be positive".into()));
    }
    let mut scores: HashMap<&str, f64> = HashMap::new();
    let mut input_ranks: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for (li, list) in lists.iter().enumerate() {
        let mut seen = HashSet::new();
        for entry in list.iter() {
            if !seen.insert(entry.passage_id.as_str()) {
                continue;
            }
            *scores.entry(&entry.passage_id).or_default() +=
                1.0 / (k_rrf as f64 + entry.rank as f64);
            input_ranks
                .entry(entry.passage_id.clone())
                .or_insert_with(|| vec![None; lists.len()])[li] = Some(entry.rank);
        }
    }
    let scored: Vec<(String, f64)> = scores
        .into_iter()
        .map(|(id, s)| (id.to_string(), s))
        .collect();
    let n = scored.len();
    Ok(FusedRanking {
        ranked: rank_scored(scored, n),
        input_ranks,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrieverRanks {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPool {
    pub question_id: String,
    pub retriever_id: RetrieverKind,
    pub entries: Vec<RankedPassage>,
    #[serde(default)]
    pub per_retriever_ranks: BTreeMap<String, RetrieverRanks>,
}

impl RetrievalPool {
    pub fn top_k(&self, k: usize) -> &[RankedPassage] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn contains(&self, passage_id: &str) -> bool {
        self.entries.iter().any(|e| e.passage_id == passage_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One line of a persisted pool file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoolLine {
    passage_id: String,
    score: f64,
    rank: usize,
    #[serde(flatten)]
    ranks: RetrieverRanks,
}

/// File name for a question id: safe characters kept, everything else
/// replaced, with a short hash suffix whenever anything was replaced.
pub fn sanitize_id(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if safe == id && !id.is_empty() && !id.starts_with('.') {
        safe
    } else {
        format!("{safe}-{}", &util::sha256_hex(id)[..8])
    }
}

pub fn pool_path(dir: &Path, kind: RetrieverKind, question_id: &str) -> PathBuf {
    dir.join(kind.as_str())
        .join(format!("{}.jsonl", sanitize_id(question_id)))
}

pub fn save_pool(dir: &Path, pool: &RetrievalPool) -> Result<PathBuf> {
    let path = pool_path(dir, pool.retriever_id, &pool.question_id);
    let lines: Vec<PoolLine> = pool
        .entries
        .iter()
        .map(|e| PoolLine {
            passage_id: e.passage_id.clone(),
            score: e.score,
            rank: e.rank,
            ranks: pool
                .per_retriever_ranks
                .get(&e.passage_id)
                .copied()
                .unwrap_or_default(),
        })
        .collect();
    util::write_jsonl(&path, &lines)?;
    Ok(path)
}

pub fn load_pool(dir: &Path, kind: RetrieverKind, question_id: &str) -> Result<RetrievalPool> {
    let path = pool_path(dir, kind, question_id);
    if !path.exists() {
        return Err(Error::NotFound(format!("pool {}", path.display())));
    }
    let lines: Vec<PoolLine> = util::read_jsonl(&path)?;
    let mut per_retriever_ranks = BTreeMap::new();
    let entries = lines
        .into_iter()
        .map(|l| {
            if l.ranks != RetrieverRanks::default() {
                per_retriever_ranks.insert(l.passage_id.clone(), l.ranks);
            }
            RankedPassage {
                passage_id: l.passage_id,
                score: l.score,
                rank: l.rank,
            }
        })
        .collect();
    Ok(RetrievalPool {
        question_id: question_id.to_string(),
        retriever_id: kind,
        entries,
        per_retriever_ranks,
    })
}

fn default_pool_size() -> usize {
    1000
}
fn default_top_k() -> usize {
    200
}
fn default_k_rrf() -> u32 {
    60
}
fn default_kind() -> RetrieverKind {
    RetrieverKind::Fused
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSettings {
    #[serde(default = "default_kind")]
    pub kind: RetrieverKind,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_k_rrf")]
    pub k_rrf: u32,
    #[serde(default)]
    pub bm25: Bm25Params,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            pool_size: default_pool_size(),
            top_k: default_top_k(),
            k_rrf: default_k_rrf(),
            bm25: Bm25Params::default(),
        }
    }
}

impl RetrievalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 || self.top_k == 0 || self.k_rrf == 0 {
            return Err(Error::Config(
                "retrieval.pool_size, retrieval.top_k and retrieval.k_rrf must be positive".into(),
            ));
        }
        if self.bm25.k1.is_nan() || self.bm25.k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25.b) {
            return Err(Error::Config("retrieval.bm25 needs k1 >= 0 and b in [0,1]".into()));
        }
        Ok(())
    }
}

/// Scores passages of an existing pool against a new query.
pub trait PoolSearcher: Send + Sync {
    fn search_within_pool(
        &self,
        pool: &RetrievalPool,
        query: &str,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<RankedPassage>>;
}

/// Query-time access to the corpus indexes.
pub struct Retriever {
    store: Arc<PassageStore>,
    sparse: Option<Bm25Index>,
    dense: Option<DenseIndex>,
    embedder: Option<LlmClient>,
    k_rrf: u32,
    pool_builds: AtomicU64,
    pool_searches: AtomicU64,
}

impl Retriever {
    pub fn new(store: Arc<PassageStore>, k_rrf: u32) -> Self {
        Self {
            store,
            sparse: None,
            dense: None,
            embedder: None,
            k_rrf,
            pool_builds: AtomicU64::new(0),
            pool_searches: AtomicU64::new(0),
        }
    }

    pub fn with_sparse(mut self, index: Bm25Index) -> Self {
        self.sparse = Some(index);
        self
    }

    /// Attaches a dense index and the client used to embed queries. The
    /// client must be the one (same model) that produced the cache.
    pub fn with_dense(mut self, index: DenseIndex, embedder: LlmClient) -> Self {
        self.dense = Some(index);
        self.embedder = Some(embedder);
        self
    }

    pub fn store(&self) -> &PassageStore {
        &self.store
    }

    pub fn store_arc(&self) -> Arc<PassageStore> {
        self.store.clone()
    }

    pub fn pool_builds(&self) -> u64 {
        self.pool_builds.load(Ordering::Relaxed)
    }

    /// Number of in-pool searches issued so far (evidence retrievals).
    pub fn pool_searches(&self) -> u64 {
        self.pool_searches.load(Ordering::Relaxed)
    }

    fn sparse_index(&self) -> Result<&Bm25Index> {
        self.sparse
            .as_ref()
            .ok_or_else(|| Error::RetrieverUnavailable("no sparse index loaded".into()))
    }

    fn dense_parts(&self) -> Result<(&DenseIndex, &LlmClient)> {
        match (&self.dense, &self.embedder) {
            (Some(d), Some(e)) => Ok((d, e)),
            _ => Err(Error::RetrieverUnavailable("no dense index loaded".into())),
        }
    }

    fn embed_query(&self, query: &str) -> Result<Vec<f32>> {
        let (_, embedder) = self.dense_parts()?;
        let mut v = embedder
            .embed(&[query.to_string()])
            .map_err(|e| Error::RetrieverUnavailable(format!("embedding query: {e}")))?;
        v.pop()
            .ok_or_else(|| Error::RetrieverUnavailable("embedder returned no vector".into()))
    }

    pub fn sparse_search(&self, query: &str, top_n: usize) -> Result<Vec<RankedPassage>> {
        Ok(self.sparse_index()?.search(query, top_n))
    }

    pub fn dense_search(&self, query: &str, top_n: usize) -> Result<Vec<RankedPassage>> {
        let q = self.embed_query(query)?;
        self.dense_parts()?.0.search_vector(&q, top_n)
    }

    /// Retrieves the question's passage pool. Fused pools fuse a sparse and a
    /// dense list, each `pool_size` long, then truncate.
    pub fn build_pool(
        &self,
        question: &Question,
        pool_size: usize,
        kind: RetrieverKind,
    ) -> Result<RetrievalPool> {
        self.pool_builds.fetch_add(1, Ordering::Relaxed);
        let mut per_retriever_ranks = BTreeMap::new();
        let entries = match kind {
            RetrieverKind::Sparse => {
                let hits = self.sparse_search(&question.text, pool_size)?;
                for h in &hits {
                    per_retriever_ranks.insert(
                        h.passage_id.clone(),
                        RetrieverRanks {
                            sparse_rank: Some(h.rank),
                            dense_rank: None,
                        },
                    );
                }
                hits
            }
            RetrieverKind::Dense => {
                let hits = self.dense_search(&question.text, pool_size)?;
                for h in &hits {
                    per_retriever_ranks.insert(
                        h.passage_id.clone(),
                        RetrieverRanks {
                            sparse_rank: None,
                            dense_rank: Some(h.rank),
                        },
                    );
                }
                hits
            }
            RetrieverKind::Fused => {
                let sparse = self.sparse_search(&question.text, pool_size)?;
                let dense = self.dense_search(&question.text, pool_size)?;
                let fused = rrf_fuse(&[&sparse, &dense], self.k_rrf)?;
                let mut ranked = fused.ranked;
                ranked.truncate(pool_size);
                for e in &ranked {
                    let r = &fused.input_ranks[&e.passage_id];
                    per_retriever_ranks.insert(
                        e.passage_id.clone(),
                        RetrieverRanks {
                            sparse_rank: r[0],
                            dense_rank: r[1],
                        },
                    );
                }
                ranked
            }
        };
        Ok(RetrievalPool {
            question_id: question.id.clone(),
            retriever_id: kind,
            entries,
            per_retriever_ranks,
        })
    }
}

impl PoolSearcher for Retriever {
    /// Re-scores only the pool's passages (minus `exclude`) with the pool's
    /// own retriever kind and returns at most `k`.
    fn search_within_pool(
        &self,
        pool: &RetrievalPool,
        query: &str,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<RankedPassage>> {
        self.pool_searches.fetch_add(1, Ordering::Relaxed);
        let members: Vec<&str> = pool
            .entries
            .iter()
            .map(|e| e.passage_id.as_str())
            .filter(|id| !exclude.contains(*id))
            .collect();
        if members.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let n = members.len();
        let sparse = || -> Result<Vec<RankedPassage>> {
            Ok(rank_scored(self.sparse_index()?.score_ids(query, &members)?, n))
        };
        let dense = || -> Result<Vec<RankedPassage>> {
            let q = self.embed_query(query)?;
            Ok(rank_scored(self.dense_parts()?.0.score_ids(&q, &members)?, n))
        };
        let mut ranked = match pool.retriever_id {
            RetrieverKind::Sparse => sparse()?,
            RetrieverKind::Dense => dense()?,
            RetrieverKind::Fused => {
                let (s, d) = (sparse()?, dense()?);
                rrf_fuse(&[&s, &d], self.k_rrf)?.ranked
            }
        };
        ranked.truncate(k);
        Ok(ranked)
    }
}
