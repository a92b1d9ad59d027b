//! Okapi BM25 over an inverted index of passage title + text.
//!
//! ```text
//! score(D, Q) = Σ_{t ∈ Q} idf(t) · tf(t,D)·(k1+1) / (tf(t,D) + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Query terms are summed with multiplicity.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rank_scored, tokenize, IndexStats, RankedPassage};
use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    pub corpus_hash: String,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    total_tokens: u64,
    /// term → (doc ordinal, term frequency), sorted by doc ordinal.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    #[serde(skip)]
    ordinal_of: HashMap<String, u32>,
}

impl Bm25Index {
    pub fn build(store: &PassageStore, params: Bm25Params) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::InvalidInput("cannot index an empty corpus".into()));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(store.len());
        let mut doc_lens = Vec::with_capacity(store.len());
        let mut total_tokens = 0u64;

        for (ordinal, passage) in store.passages().iter().enumerate() {
            let tokens = tokenize(&passage.searchable_text());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((ordinal as u32, count));
            }
            doc_ids.push(passage.id.clone());
            doc_lens.push(tokens.len() as u32);
            total_tokens += tokens.len() as u64;
        }

        let mut index = Self {
            params,
            corpus_hash: store.manifest().content_hash.clone(),
            doc_ids,
            doc_lens,
            total_tokens,
            postings,
            ordinal_of: HashMap::new(),
        };
        index.rebuild_lookup();
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.ordinal_of = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(format!("sparse index {}", path.display())));
        }
        let mut index: Self = util::read_json(path)?;
        index.rebuild_lookup();
        Ok(index)
    }

    pub fn stats(&self) -> IndexStats {
        let doc_count = self.doc_ids.len();
        IndexStats {
            doc_count,
            avg_doc_len: if doc_count == 0 {
                0.0
            } else {
                self.total_tokens as f64 / doc_count as f64
            },
            vocabulary_size: self.postings.len(),
        }
    }

    fn avgdl(&self) -> f64 {
        self.stats().avg_doc_len
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc_len: u32, avgdl: f64) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if avgdl > 0.0 {
            1.0 - b + b * doc_len as f64 / avgdl
        } else {
            1.0
        };
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// Scores every passage sharing at least one term with `query`.
    fn score_all(&self, query: &str) -> HashMap<u32, f64> {
        let avgdl = self.avgdl();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                *scores.entry(doc).or_default() +=
                    idf * self.term_weight(tf, self.doc_lens[doc as usize], avgdl);
            }
        }
        scores
    }

    pub fn search(&self, query: &str, top_n: usize) -> Vec<RankedPassage> {
        let scored = self
            .score_all(query)
            .into_iter()
            .map(|(doc, s)| (self.doc_ids[doc as usize].clone(), s))
            .collect();
        rank_scored(scored, top_n)
    }

    /// BM25 score of `query` for each listed passage (zero when no term
    /// matches). Unknown ids are an error.
    pub fn score_ids(&self, query: &str, ids: &[&str]) -> Result<Vec<(String, f64)>> {
        let terms: Vec<(String, f64)> = tokenize(query)
            .into_iter()
            .map(|t| {
                let idf = self.idf(&t);
                (t, idf)
            })
            .collect();
        let avgdl = self.avgdl();
        ids.iter()
            .map(|id| {
                let ord = *self
                    .ordinal_of
                    .get(*id)
                    .ok_or_else(|| Error::NotFound(format!("passage `{id}` not in sparse index")))?;
                let mut score = 0.0;
                for (term, idf) in &terms {
                    if let Some(list) = self.postings.get(term) {
                        if let Ok(pos) = list.binary_search_by_key(&ord, |&(d, _)| d) {
                            score += idf * self.term_weight(list[pos].1, self.doc_lens[ord as usize], avgdl);
                        }
                    }
                }
                Ok((id.to_string(), score))
            })
            .collect()
    }
}
