//! Deterministic scripted backend.
//!
//! The script file is a JSON object mapping a SHA-256 key to a response:
//!
//! ```json
//! { "<sha256>": { "text": "* A\n* B", "token_distribution": {"True": 0.7}, "embedding": [0.1, 0.2] } }
//! ```
//!
//! Chat entries are keyed by [`ChatRequest::prompt_hash`]; embedding entries
//! by the SHA-256 of the input text.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendSpec, ChatRequest, LlmBackend, LlmError, TokenProb};
use crate::util;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_distribution: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StubScript {
    pub entries: BTreeMap<String, StubEntry>,
}

impl StubScript {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let bytes = std::fs::read(path)
            .map_err(|e| LlmError::InvalidRequest(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| LlmError::InvalidRequest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> crate::Result<()> {
        util::write_json_pretty(path, self)
    }

    pub fn insert_text(&mut self, request: &ChatRequest, text: impl Into<String>) {
        self.entries
            .entry(request.prompt_hash())
            .or_default()
            .text = Some(text.into());
    }

    pub fn insert_distribution(&mut self, request: &ChatRequest, dist: &[(&str, f64)]) {
        self.entries
            .entry(request.prompt_hash())
            .or_default()
            .token_distribution = Some(dist.iter().map(|(t, p)| (t.to_string(), *p)).collect());
    }

    pub fn insert_embedding(&mut self, text: &str, vector: Vec<f32>) {
        self.entries
            .entry(util::sha256_hex(text))
            .or_default()
            .embedding = Some(vector);
    }

    pub fn merge(&mut self, other: StubScript) {
        for (k, v) in other.entries {
            let slot = self.entries.entry(k).or_default();
            if v.text.is_some() {
                slot.text = v.text;
            }
            if v.token_distribution.is_some() {
                slot.token_distribution = v.token_distribution;
            }
            if v.embedding.is_some() {
                slot.embedding = v.embedding;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    script: StubScript,
    hashed_dim: Option<usize>,
    identity: String,
}

impl StubBackend {
    pub fn new(script: StubScript, hashed_dim: Option<usize>) -> Self {
        let identity = format!(
            "stub:{}:{}",
            util::json_hash(&script).expect("script serializes"),
            hashed_dim.unwrap_or(0)
        );
        Self {
            script,
            hashed_dim,
            identity,
        }
    }

    pub fn from_spec(spec: &BackendSpec) -> Result<Self, LlmError> {
        let script = match &spec.script {
            Some(path) => StubScript::load(path)?,
            None => StubScript::default(),
        };
        Ok(Self::new(script, spec.hashed_embedding_dim))
    }

    fn entry(&self, request: &ChatRequest) -> Result<&StubEntry, LlmError> {
        let key = request.prompt_hash();
        self.script
            .entries
            .get(&key)
            .ok_or(LlmError::Unscripted(key))
    }
}

impl LlmBackend for StubBackend {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let entry = self.entry(request)?;
        entry
            .text
            .clone()
            .ok_or_else(|| LlmError::Unscripted(request.prompt_hash()))
    }

    fn first_token_distribution(
        &self,
        request: &ChatRequest,
    ) -> Result<Option<Vec<TokenProb>>, LlmError> {
        let entry = self.entry(request)?;
        Ok(entry.token_distribution.as_ref().map(|d| {
            d.iter()
                .map(|(token, p)| TokenProb {
                    token: token.clone(),
                    probability: *p,
                })
                .collect()
        }))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        texts
            .iter()
            .map(|t| {
                let key = util::sha256_hex(t);
                match self.script.entries.get(&key).and_then(|e| e.embedding.clone()) {
                    Some(v) => Ok(v),
                    None => match self.hashed_dim {
                        Some(dim) => Ok(hashed_embedding(t, dim)),
                        None => Err(LlmError::Unscripted(key)),
                    },
                }
            })
            .collect()
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }
}

/// Feature-hashed bag of lowercase alphanumeric tokens. Deterministic, and
/// texts sharing words get positive cosine similarity.
pub fn hashed_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0f32; dim.max(1)];
    for token in crate::retrieval::tokenize(text) {
        let digest = util::sha256_hex(&token);
        let bucket = u64::from_str_radix(&digest[..16], 16).unwrap_or(0) as usize % v.len();
        v[bucket] += 1.0;
    }
    v
}
