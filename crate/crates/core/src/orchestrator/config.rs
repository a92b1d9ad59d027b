//! Run configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipv::IpvConfig;
use crate::llm::BackendSpec;
use crate::reader::ReaderSettings;
use crate::retrieval::RetrievalSettings;

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_parallel() -> usize {
    4
}
fn default_chunk() -> usize {
    100
}
fn default_concurrency() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Defaults to a prefix of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Threaded to stochastic components; none are stochastic at temperature 0.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallel")]
    pub max_parallel_questions: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            run_id: None,
            output_dir: default_output_dir(),
            seed: 0,
            max_parallel_questions: default_parallel(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub corpus_id: String,
    /// Document JSON-lines to ingest. Without it, `store_dir` must already
    /// hold an ingested store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    /// Defaults to `<output_dir>/corpus`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_dir: Option<PathBuf>,
    #[serde(default = "default_chunk")]
    pub chunk_size_words: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// Our own gold JSON-lines.
    #[default]
    Jsonl,
    Qampari,
    Romqa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default)]
    pub format: DatasetFormat,
    /// Evaluate only the first `limit` questions (by id).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    pub reader: BackendSpec,
    /// Roles left unset share the reader's backend description.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqg: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier: Option<BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<BackendSpec>,
    /// Required for dense and fused retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<BackendSpec>,
}

impl LlmSection {
    pub fn vqg(&self) -> &BackendSpec {
        self.vqg.as_ref().unwrap_or(&self.reader)
    }
    pub fn verifier(&self) -> &BackendSpec {
        self.verifier.as_ref().unwrap_or(&self.reader)
    }
    pub fn judge(&self) -> &BackendSpec {
        self.judge.as_ref().unwrap_or(&self.reader)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Match predictions with the judge model in addition to exact match.
    #[serde(default)]
    pub judge: bool,
    /// Extra cutoffs for answer recall of the pool; `retrieval.top_k` is
    /// always reported.
    #[serde(default)]
    pub arecall_k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub corpus: CorpusSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub retrieval: RetrievalSettings,
    #[serde(default)]
    pub reader: ReaderSettings,
    pub llm: LlmSection,
    #[serde(default)]
    pub ipv: IpvConfig,
    #[serde(default)]
    pub eval: EvalSettings,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_spec(base: &Path, spec: &mut BackendSpec) {
    if let Some(script) = spec.script.as_mut() {
        resolve(base, script);
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.run.output_dir);
        if let Some(p) = self.corpus.source.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = self.corpus.store_dir.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut self.dataset.path);
        let llm = &mut self.llm;
        resolve_spec(base, &mut llm.reader);
        for spec in [&mut llm.vqg, &mut llm.verifier, &mut llm.judge, &mut llm.embedder]
            .into_iter()
            .flatten()
        {
            resolve_spec(base, spec);
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.corpus
            .store_dir
            .clone()
            .unwrap_or_else(|| self.run.output_dir.join("corpus"))
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.ipv.validate()?;
        if self.run.max_parallel_questions == 0 || self.llm.max_concurrency == 0 {
            return Err(Error::Config(
                "run.max_parallel_questions and llm.max_concurrency must be positive".into(),
            ));
        }
        if self.corpus.chunk_size_words == 0 {
            return Err(Error::Config("corpus.chunk_size_words must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.reader.failure_budget) {
            return Err(Error::Config("reader.failure_budget must be in [0, 1]".into()));
        }
        if self.eval.arecall_k.contains(&0) {
            return Err(Error::Config("eval.arecall_k values must be positive".into()));
        }
        match &self.corpus.source {
            Some(src) if !src.exists() => {
                return Err(Error::Config(format!("corpus.source {} does not exist", src.display())))
            }
            None if !self.store_dir().join(crate::corpus::MANIFEST_FILE).exists() => {
                return Err(Error::Config(
                    "corpus.source is unset and corpus.store_dir holds no ingested store".into(),
                ))
            }
            _ => {}
        }
        if !self.dataset.path.exists() {
            return Err(Error::Config(format!(
                "dataset.path {} does not exist",
                self.dataset.path.display()
            )));
        }
        if self.retrieval.kind.needs_dense() && self.llm.embedder.is_none() {
            return Err(Error::Config(format!(
                "retrieval.kind = {} needs an [llm.embedder] backend",
                self.retrieval.kind
            )));
        }
        let llm = &self.llm;
        for (role, spec) in [
            ("reader", Some(&llm.reader)),
            ("vqg", llm.vqg.as_ref()),
            ("verifier", llm.verifier.as_ref()),
            ("judge", llm.judge.as_ref()),
            ("embedder", llm.embedder.as_ref()),
        ] {
            if let Some(spec) = spec {
                spec.validate()
                    .map_err(|e| Error::Config(format!("llm.{role}: {e}")))?;
                if let Some(script) = &spec.script {
                    if !script.exists() {
                        return Err(Error::Config(format!(
                            "llm.{role}.script {} does not exist",
                            script.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[corpus]
corpus_id = "toy"
source = "docs.jsonl"

[dataset]
path = "gold.jsonl"

[llm.reader]
kind = "stub"
script = "script.json"
"#;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.retrieval.pool_size, 1000);
        assert_eq!(cfg.retrieval.top_k, 200);
        assert_eq!(cfg.retrieval.k_rrf, 60);
        assert_eq!(cfg.ipv.k_extra, 1);
        assert!(cfg.ipv.enabled);
        assert_eq!(cfg.corpus.chunk_size_words, 100);
        assert_eq!(cfg.llm.verifier(), &cfg.llm.reader);
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        cfg.resolve_paths(Path::new("/etc/exp"));
        assert_eq!(cfg.dataset.path, Path::new("/etc/exp/gold.jsonl"));
        assert_eq!(cfg.llm.reader.script.as_deref(), Some(Path::new("/etc/exp/script.json")));
        assert_eq!(cfg.store_dir(), Path::new("/etc/exp/runs/default/corpus"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let typo = MINIMAL.replace("[dataset]", "[dataset]\nlimt = 3");
        assert!(matches!(RunConfig::from_toml_str(&typo), Err(Error::Config(_))));
        let dir = tempfile::tempdir().unwrap();
        for f in ["docs.jsonl", "gold.jsonl", "script.json"] {
            std::fs::write(dir.path().join(f), "{}").unwrap();
        }
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("embedder"), "{err}");
        std::fs::write(&path, format!("{MINIMAL}\n[retrieval]\nkind = \"sparse\"\n")).unwrap();
        RunConfig::load(&path).unwrap();
        std::fs::write(&path, format!("{MINIMAL}\n[retrieval]\nkind = \"sparse\"\n[ipv]\nskip_factual = true\nskip_categorical = true\n")).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn every_section_parses() {
        let full = r#"
[run]
output_dir = "runs/dev"
max_parallel_questions = 4
[corpus]
corpus_id = "wiki"
source = "docs.jsonl"
chunk_size_words = 100
[dataset]
path = "gold.jsonl"
format = "qampari"
limit = 200
[retrieval]
kind = "fused"
pool_size = 1000
top_k = 200
k_rrf = 60
[retrieval.bm25]
k1 = 0.9
b = 0.4
[reader]
mode = "closed_book"
[llm]
max_concurrency = 8
[llm.reader]
kind = "http"
base_url = "http://localhost:8000/v1"
model_id = "m"
api_key_env = "KEY"
[llm.embedder]
kind = "stub"
hashed_embedding_dim = 64
[ipv]
k_extra = 2
self_reflection = true
flavor = "negation_enabled"
[eval]
judge = true
arecall_k = [10, 50]
"#;
        let cfg = RunConfig::from_toml_str(full).unwrap();
        assert_eq!(cfg.dataset.format, DatasetFormat::Qampari);
        assert_eq!(cfg.ipv.flavor, crate::ipv::DatasetFlavor::NegationEnabled);
        assert_eq!(cfg.reader.mode, crate::reader::ReadingMode::ClosedBook);
        assert_eq!(cfg.llm.judge().model_id, "m");
        assert_eq!(cfg.eval.arecall_k, [10, 50]);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
