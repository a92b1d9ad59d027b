//! End-to-end runs with stage-level caching, timing and call accounting.
//!
//! Stages run in order: ingest, index (sparse), embed (dense), pool, read,
//! plan, verify, evaluate. Each stage persists its artifact under the run's
//! output directory together with a meta file holding the stage key (a hash
//! of the stage's configuration and upstream artifact hashes) and the hash of
//! what it wrote. A stage whose key and artifact hash still match is loaded
//! instead of recomputed.

pub mod config;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{self, PassageStore};
use crate::error::{Error, Result};
use crate::eval::{self, GoldRecord, MetricsReport, NativeFormat, QuestionMetrics};
use crate::ipv::{self, FilterResult, Verdict, VerificationPlan, Verifier};
use crate::llm::{BackendKind, BackendSpec, CallCounts, LlmClient, ResponseCache, Semaphore};
use crate::reader::{AnswerCandidate, CandidateSet, Reader};
use crate::retrieval::{self, Bm25Index, DenseIndex, PoolSearcher, RetrievalPool, Retriever};
use crate::util;

pub use config::{
    CorpusSection, DatasetFormat, DatasetSection, EvalSettings, LlmSection, RunConfig, RunSection,
};
pub use report::{report_latency, sweep, SweepAxis, SweepReport, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Index,
    Embed,
    Pool,
    Read,
    Plan,
    Verify,
    Evaluate,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Index => "index",
            Stage::Embed => "embed",
            Stage::Pool => "pool",
            Stage::Read => "read",
            Stage::Plan => "plan",
            Stage::Verify => "verify",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Consult and fill the persistent LLM response cache.
    pub resume: bool,
    /// Recompute every stage even when its cached artifact is valid.
    pub force: bool,
}

/// Paths of every artifact under a run's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn root(&self) -> &Path {
        &self.root
    }
    pub fn stage_meta(&self, stage: Stage) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.json"))
    }
    pub fn bm25(&self) -> PathBuf {
        self.root.join("index").join("bm25.json")
    }
    pub fn dense_dir(&self) -> PathBuf {
        self.root.join("index").join("dense")
    }
    pub fn pools_dir(&self) -> PathBuf {
        self.root.join("pools")
    }
    pub fn candidates(&self) -> PathBuf {
        self.root.join("candidates.jsonl")
    }
    pub fn plans(&self) -> PathBuf {
        self.root.join("plans.jsonl")
    }
    pub fn filtered(&self) -> PathBuf {
        self.root.join("filtered.jsonl")
    }
    pub fn verdicts(&self) -> PathBuf {
        self.root.join("verdicts.jsonl")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn llm_cache(&self) -> PathBuf {
        self.root.join("cache").join("llm_responses.jsonl")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Cached,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    /// Wall-clock seconds of the run that produced the artifact.
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_question_secs: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub output_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageMeta {
    key: String,
    record: StageRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounters {
    pub reader: CallCounts,
    pub vqg: CallCounts,
    pub verifier: CallCounts,
    pub judge: CallCounts,
    pub embedder: CallCounts,
    pub pool_builds: u64,
    pub pool_searches: u64,
    pub read_failures: u64,
    pub fallback_plans: u64,
}

impl RunCounters {
    /// Calls that reached an LLM backend (cache hits excluded).
    pub fn llm_calls(&self) -> u64 {
        [self.reader, self.vqg, self.verifier, self.judge, self.embedder]
            .iter()
            .map(CallCounts::total)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub started_at: DateTime<Utc>,
    pub config: RunConfig,
    pub corpus_hash: String,
    pub question_count: usize,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub counters: RunCounters,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Present when the run reached the evaluate stage.
    pub metrics: Option<MetricsReport>,
}

struct Clients {
    reader: LlmClient,
    vqg: LlmClient,
    verifier: LlmClient,
    judge: Option<LlmClient>,
    embedder: Option<LlmClient>,
}

/// One configured run. LLM call counters accumulate over the pipeline's
/// lifetime.
pub struct Pipeline {
    cfg: RunConfig,
    opts: RunOptions,
    layout: Layout,
    clients: Clients,
    workers: rayon::ThreadPool,
    run_id: String,
}

/// Backend description as it affects outputs (timeouts and retries do not).
fn fingerprint(spec: &BackendSpec) -> Result<Value> {
    let script = match (&spec.kind, &spec.script) {
        (BackendKind::Stub, Some(p)) => Some(util::file_hash(p)?),
        _ => None,
    };
    Ok(json!({
        "kind": spec.kind,
        "base_url": spec.base_url,
        "model_id": spec.model_id,
        "script": script,
        "hashed_embedding_dim": spec.hashed_embedding_dim,
        "top_logprobs": spec.top_logprobs,
        "logprob_fallback": spec.logprob_fallback,
    }))
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    question_id: &'a str,
    #[serde(flatten)]
    verdict: &'a Verdict,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, opts: RunOptions) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg.run.output_dir);
        let limiter = Arc::new(Semaphore::new(cfg.llm.max_concurrency));
        let cache = if opts.resume {
            Some(Arc::new(ResponseCache::open(&layout.llm_cache())?))
        } else {
            None
        };
        let client = |role: &str, spec: &BackendSpec| -> Result<LlmClient> {
            LlmClient::from_spec(spec, limiter.clone())
                .map(|c| c.with_cache(cache.clone()))
                .map_err(|e| Error::Config(format!("llm.{role}: {e}")))
        };
        let clients = Clients {
            reader: client("reader", &cfg.llm.reader)?,
            vqg: client("vqg", cfg.llm.vqg())?,
            verifier: client("verifier", cfg.llm.verifier())?,
            judge: cfg
                .eval
                .judge
                .then(|| client("judge", cfg.llm.judge()))
                .transpose()?,
            embedder: cfg
                .llm
                .embedder
                .as_ref()
                .map(|s| client("embedder", s))
                .transpose()?,
        };
        let workers = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.max_parallel_questions.max(cfg.llm.max_concurrency))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let run_id = match &cfg.run.run_id {
            Some(id) => id.clone(),
            None => format!("run-{}", &util::json_hash(&cfg)?[..12]),
        };
        Ok(Self {
            cfg,
            opts,
            layout,
            clients,
            workers,
            run_id,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn run(&self) -> Result<RunOutcome> {
        self.run_until(Stage::Evaluate)
    }

    /// Runs every stage up to and including `target`, then writes the run
    /// manifest (also when a stage fails).
    pub fn run_until(&self, target: Stage) -> Result<RunOutcome> {
        let mut manifest = RunManifest {
            run_id: self.run_id.clone(),
            started_at: Utc::now(),
            config: self.cfg.clone(),
            corpus_hash: String::new(),
            question_count: 0,
            stages: BTreeMap::new(),
            counters: RunCounters::default(),
            completed: false,
            error: None,
        };
        let result = self.execute(target, &mut manifest);
        let c = &self.clients;
        manifest.counters.reader = c.reader.counts();
        manifest.counters.vqg = c.vqg.counts();
        manifest.counters.verifier = c.verifier.counts();
        manifest.counters.judge = c.judge.as_ref().map(LlmClient::counts).unwrap_or_default();
        manifest.counters.embedder = c.embedder.as_ref().map(LlmClient::counts).unwrap_or_default();
        manifest.completed = result.is_ok();
        manifest.error = result.as_ref().err().map(ToString::to_string);
        util::write_json_pretty(&self.layout.manifest(), &manifest)?;
        result.map(|metrics| RunOutcome { manifest, metrics })
    }

    /// Runs `f` for every question on the worker pool, at most
    /// `max_parallel_questions` at a time, keeping input order.
    fn per_question<T: Send>(
        &self,
        gold: &[GoldRecord],
        f: impl Fn(usize, &GoldRecord) -> Result<T> + Sync,
    ) -> Result<(Vec<T>, BTreeMap<String, f64>)> {
        let width = self.cfg.run.max_parallel_questions;
        let timed: Vec<(Result<T>, f64)> = self.workers.install(|| {
            let mut all = Vec::with_capacity(gold.len());
            for (c, chunk) in gold.chunks(width).enumerate() {
                let part: Vec<_> = chunk
                    .par_iter()
                    .enumerate()
                    .map(|(j, g)| {
                        let start = Instant::now();
                        let r = f(c * width + j, g);
                        (r, start.elapsed().as_secs_f64())
                    })
                    .collect();
                all.extend(part);
            }
            all
        });
        let mut out = Vec::with_capacity(gold.len());
        let mut secs = BTreeMap::new();
        for (g, (r, s)) in gold.iter().zip(timed) {
            secs.insert(g.question.id.clone(), s);
            out.push(r?);
        }
        Ok((out, secs))
    }

    /// Loads a stage from cache when its key and artifact hash still match,
    /// otherwise computes it and records the new meta.
    fn stage<T>(
        &self,
        manifest: &mut RunManifest,
        stage: Stage,
        key: &Value,
        output_hash: impl Fn() -> Result<String>,
        load: impl FnOnce() -> Result<T>,
        compute: impl FnOnce() -> Result<(T, BTreeMap<String, f64>)>,
    ) -> Result<(T, String)> {
        let key = util::json_hash(&json!({ "stage": stage, "key": key }))?;
        let meta_path = self.layout.stage_meta(stage);
        if !self.opts.force {
            if let Ok(meta) = util::read_json::<StageMeta>(&meta_path) {
                let current = output_hash().ok();
                if meta.key == key && current.as_deref() == Some(meta.record.output_hash.as_str()) {
                    match load() {
                        Ok(value) => {
                            tracing::info!(%stage, "using cached artifact");
                            let record = StageRecord {
                                status: StageStatus::Cached,
                                ..meta.record
                            };
                            let hash = record.output_hash.clone();
                            manifest.stages.insert(stage, record);
                            return Ok((value, hash));
                        }
                        Err(e) => tracing::warn!(%stage, error = %e, "cached artifact unreadable; recomputing"),
                    }
                }
            }
        }
        let _ = std::fs::remove_file(&meta_path);
        tracing::info!(%stage, "running stage");
        let start = Instant::now();
        let computed = compute().and_then(|(value, per_q)| Ok((value, per_q, output_hash()?)));
        let seconds = start.elapsed().as_secs_f64();
        match computed {
            Ok((value, per_question_secs, hash)) => {
                let record = StageRecord {
                    status: StageStatus::Completed,
                    seconds,
                    per_question_secs,
                    output_hash: hash.clone(),
                    error: None,
                };
                util::write_json_pretty(
                    &meta_path,
                    &StageMeta {
                        key,
                        record: record.clone(),
                    },
                )?;
                manifest.stages.insert(stage, record);
                Ok((value, hash))
            }
            Err(e) => {
                manifest.stages.insert(
                    stage,
                    StageRecord {
                        status: StageStatus::Failed,
                        seconds,
                        per_question_secs: BTreeMap::new(),
                        output_hash: String::new(),
                        error: Some(e.to_string()),
                    },
                );
                Err(e)
            }
        }
    }

    /// Gold records sorted by question id, truncated to the configured limit.
    pub fn load_dataset(&self) -> Result<(Vec<GoldRecord>, String)> {
        let ds = &self.cfg.dataset;
        let mut records = match ds.format {
            DatasetFormat::Jsonl => eval::load_gold(&ds.path)?,
            DatasetFormat::Qampari => eval::convert_native(&ds.path, NativeFormat::Qampari)?,
            DatasetFormat::Romqa => eval::convert_native(&ds.path, NativeFormat::Romqa)?,
        };
        records.sort_by(|a, b| a.question.id.cmp(&b.question.id));
        if let Some(limit) = ds.limit {
            records.truncate(limit);
        }
        if records.is_empty() {
            return Err(Error::InvalidInput(format!(
                "dataset {} has no questions",
                ds.path.display()
            )));
        }
        let hash = util::json_hash(&json!({
            "file": util::file_hash(&ds.path)?,
            "format": ds.format,
            "limit": ds.limit,
        }))?;
        Ok((records, hash))
    }

    fn embedder_fp(&self) -> Result<Value> {
        self.cfg.llm.embedder.as_ref().map(fingerprint).transpose().map(|v| v.unwrap_or(Value::Null))
    }

    /// Retrieval settings that change scores, given the pool's kind.
    fn retrieval_key(&self) -> Result<Value> {
        let r = &self.cfg.retrieval;
        Ok(json!({
            "kind": r.kind,
            "k_rrf": r.k_rrf,
            "bm25": r.kind.needs_sparse().then_some(r.bm25),
            "embedder": if r.kind.needs_dense() { self.embedder_fp()? } else { Value::Null },
        }))
    }

    fn execute(&self, target: Stage, m: &mut RunManifest) -> Result<Option<MetricsReport>> {
        let (gold, dataset_hash) = self.load_dataset()?;
        m.question_count = gold.len();

        let store = Arc::new(self.stage_ingest(m)?);
        let corpus_hash = store.manifest().content_hash.clone();
        m.corpus_hash = corpus_hash.clone();
        if target == Stage::Ingest {
            return Ok(None);
        }

        let kind = self.cfg.retrieval.kind;
        let sparse = if kind.needs_sparse() || target == Stage::Index {
            Some(self.stage_index(&store, m)?)
        } else {
            None
        };
        if target == Stage::Index {
            return Ok(None);
        }
        let dense = if kind.needs_dense() || target == Stage::Embed {
            Some(self.stage_embed(&store, m)?)
        } else {
            None
        };
        if target == Stage::Embed {
            return Ok(None);
        }

        let mut retriever = Retriever::new(store.clone(), self.cfg.retrieval.k_rrf);
        if let Some(index) = sparse {
            retriever = retriever.with_sparse(index);
        }
        if let Some(index) = dense {
            let embedder = self.clients.embedder.clone().ok_or_else(|| {
                Error::Config("dense retrieval needs an [llm.embedder] backend".into())
            })?;
            retriever = retriever.with_dense(index, embedder);
        }
        let retriever = Arc::new(retriever);

        let result = self.execute_question_stages(target, m, &gold, &dataset_hash, &store, &retriever);
        m.counters.pool_builds = retriever.pool_builds();
        m.counters.pool_searches = retriever.pool_searches();
        result
    }

    fn execute_question_stages(
        &self,
        target: Stage,
        m: &mut RunManifest,
        gold: &[GoldRecord],
        dataset_hash: &str,
        store: &Arc<PassageStore>,
        retriever: &Arc<Retriever>,
    ) -> Result<Option<MetricsReport>> {
        let (pools, pools_hash) = self.stage_pool(m, gold, dataset_hash, &store.manifest().content_hash, retriever)?;
        if target == Stage::Pool {
            return Ok(None);
        }
        let (candidates, candidates_hash) = self.stage_read(m, gold, &pools, &pools_hash, store)?;
        if target == Stage::Read {
            return Ok(None);
        }

        let ipv_on = self.cfg.ipv.enabled;
        let mut answers_hash = candidates_hash.clone();
        let mut filtered: Option<Vec<FilterResult>> = None;
        if ipv_on {
            let (plans, plans_hash) = self.stage_plan(m, gold, dataset_hash)?;
            if target == Stage::Plan {
                return Ok(None);
            }
            let upstream = json!([candidates_hash, pools_hash, plans_hash]);
            let (results, hash) =
                self.stage_verify(m, gold, &upstream, &candidates, &plans, &pools, store, retriever)?;
            answers_hash = hash;
            filtered = Some(results);
        }
        if target < Stage::Evaluate {
            return Ok(None);
        }

        let finals: Vec<&[AnswerCandidate]> = match &filtered {
            Some(results) => results.iter().map(|r| r.retained.as_slice()).collect(),
            None => candidates.iter().map(|c| c.candidates.as_slice()).collect(),
        };
        let report = self.stage_evaluate(m, gold, dataset_hash, &answers_hash, &pools_hash, &finals, &pools, store)?;
        Ok(Some(report))
    }

    fn stage_ingest(&self, m: &mut RunManifest) -> Result<PassageStore> {
        let c = &self.cfg.corpus;
        let store_dir = self.cfg.store_dir();
        let passages = store_dir.join(corpus::PASSAGES_FILE);
        let key = match &c.source {
            Some(src) => json!({
                "source": util::file_hash(src)?,
                "chunk_size_words": c.chunk_size_words,
                "corpus_id": c.corpus_id,
                "store": store_dir,
            }),
            None => json!({ "store": util::file_hash(&passages)? }),
        };
        let (store, _) = self.stage(
            m,
            Stage::Ingest,
            &key,
            || util::file_hash(&passages),
            || PassageStore::open(&store_dir),
            || {
                if let Some(src) = &c.source {
                    corpus::ingest(src, &store_dir, c.chunk_size_words, &c.corpus_id)?;
                }
                Ok((PassageStore::open(&store_dir)?, BTreeMap::new()))
            },
        )?;
        Ok(store)
    }

    fn stage_index(&self, store: &PassageStore, m: &mut RunManifest) -> Result<Bm25Index> {
        let path = self.layout.bm25();
        let key = json!({
            "corpus": store.manifest().content_hash,
            "bm25": self.cfg.retrieval.bm25,
        });
        let (index, _) = self.stage(
            m,
            Stage::Index,
            &key,
            || util::file_hash(&path),
            || Bm25Index::load(&path),
            || {
                let index = Bm25Index::build(store, self.cfg.retrieval.bm25)?;
                index.save(&path)?;
                Ok((index, BTreeMap::new()))
            },
        )?;
        Ok(index)
    }

    fn stage_embed(&self, store: &PassageStore, m: &mut RunManifest) -> Result<DenseIndex> {
        let embedder = self
            .clients
            .embedder
            .as_ref()
            .ok_or_else(|| Error::Config("embedding the corpus needs an [llm.embedder] backend".into()))?;
        let dir = self.layout.dense_dir();
        let corpus_hash = store.manifest().content_hash.clone();
        let key = json!({ "corpus": corpus_hash, "embedder": self.embedder_fp()? });
        let (index, _) = self.stage(
            m,
            Stage::Embed,
            &key,
            || {
                Ok(format!(
                    "{}{}",
                    util::file_hash(&dir.join(retrieval::VECTORS_FILE))?,
                    util::file_hash(&dir.join(retrieval::META_FILE))?
                ))
            },
            || {
                let index = DenseIndex::load(&dir)?;
                if index.meta().corpus_hash != corpus_hash {
                    return Err(Error::Config("embedding cache belongs to another corpus".into()));
                }
                Ok(index)
            },
            || {
                let index = DenseIndex::build(store, embedder)?;
                index.save(&dir)?;
                Ok((index, BTreeMap::new()))
            },
        )?;
        Ok(index)
    }

    fn stage_pool(
        &self,
        m: &mut RunManifest,
        gold: &[GoldRecord],
        dataset_hash: &str,
        corpus_hash: &str,
        retriever: &Arc<Retriever>,
    ) -> Result<(Vec<RetrievalPool>, String)> {
        let r = &self.cfg.retrieval;
        let dir = self.layout.pools_dir();
        let key = json!({
            "corpus": corpus_hash,
            "dataset": dataset_hash,
            "pool_size": r.pool_size,
            "retrieval": self.retrieval_key()?,
        });
        let pools_hash = || {
            let files = gold
                .iter()
                .map(|g| {
                    util::file_hash(&retrieval::pool_path(&dir, r.kind, &g.question.id))
                        .map(|h| (g.question.id.as_str(), h))
                })
                .collect::<Result<Vec<_>>>()?;
            util::json_hash(&files)
        };
        self.stage(
            m,
            Stage::Pool,
            &key,
            pools_hash,
            || {
                gold.iter()
                    .map(|g| retrieval::load_pool(&dir, r.kind, &g.question.id))
                    .collect()
            },
            || {
                self.per_question(gold, |_, g| {
                    let pool = retriever.build_pool(&g.question, r.pool_size, r.kind)?;
                    retrieval::save_pool(&dir, &pool)?;
                    Ok(pool)
                })
            },
        )
    }

    fn stage_read(
        &self,
        m: &mut RunManifest,
        gold: &[GoldRecord],
        pools: &[RetrievalPool],
        pools_hash: &str,
        store: &Arc<PassageStore>,
    ) -> Result<(Vec<CandidateSet>, String)> {
        let path = self.layout.candidates();
        let top_k = self.cfg.retrieval.top_k;
        let key = json!({
            "pools": pools_hash,
            "top_k": top_k,
            "reader": self.cfg.reader,
            "backend": fingerprint(&self.cfg.llm.reader)?,
        });
        let reader = Reader::new(self.clients.reader.clone(), store.clone(), self.cfg.reader.clone());
        let mut failures = 0u64;
        let result = self.stage(
            m,
            Stage::Read,
            &key,
            || util::file_hash(&path),
            || load_aligned::<CandidateSet>(&path, gold, |c| &c.question_id).map(|sets| {
                sets.into_iter()
                    .map(|mut s| {
                        s.fill_question_ids();
                        s
                    })
                    .collect()
            }),
            || {
                let (outcomes, secs) = self.per_question(gold, |i, g| {
                    let pool = &pools[i];
                    if pool.is_empty() && reader.settings().mode != crate::reader::ReadingMode::ClosedBook {
                        tracing::warn!(question = %g.question.id, "empty pool; no candidates");
                        return Ok(crate::reader::ReadOutcome {
                            set: CandidateSet {
                                question_id: g.question.id.clone(),
                                mode: reader.settings().mode,
                                passages_read: 0,
                                candidates: Vec::new(),
                            },
                            failed_passages: Vec::new(),
                        });
                    }
                    reader.read(&g.question, pool, top_k)
                })?;
                failures = outcomes.iter().map(|o| o.failed_passages.len() as u64).sum();
                let sets: Vec<CandidateSet> = outcomes.into_iter().map(|o| o.set).collect();
                util::write_jsonl(&path, &sets)?;
                Ok((sets, secs))
            },
        );
        m.counters.read_failures += failures;
        result
    }

    fn stage_plan(
        &self,
        m: &mut RunManifest,
        gold: &[GoldRecord],
        dataset_hash: &str,
    ) -> Result<(Vec<VerificationPlan>, String)> {
        let path = self.layout.plans();
        let ipv = &self.cfg.ipv;
        let key = json!({
            "dataset": dataset_hash,
            "backend": fingerprint(self.cfg.llm.vqg())?,
            "flavor": ipv.flavor,
            "max_factual": ipv.max_factual,
            "vqg_max_tokens": ipv.vqg_max_tokens,
            "self_reflection": ipv.self_reflection,
        });
        let (plans, hash) = self.stage(
            m,
            Stage::Plan,
            &key,
            || util::file_hash(&path),
            || load_aligned::<VerificationPlan>(&path, gold, |p| &p.question_id),
            || {
                let (plans, secs) = self.per_question(gold, |_, g| {
                    ipv::plan_for_question(&self.clients.vqg, &g.question, ipv)
                })?;
                util::write_jsonl(&path, &plans)?;
                Ok((plans, secs))
            },
        )?;
        m.counters.fallback_plans = plans
            .iter()
            .filter(|p| p.mode == ipv::PlanMode::Fallback)
            .count() as u64;
        Ok((plans, hash))
    }

    #[allow(clippy::too_many_arguments)]
    fn stage_verify(
        &self,
        m: &mut RunManifest,
        gold: &[GoldRecord],
        upstream: &Value,
        candidates: &[CandidateSet],
        plans: &[VerificationPlan],
        pools: &[RetrievalPool],
        store: &Arc<PassageStore>,
        retriever: &Arc<Retriever>,
    ) -> Result<(Vec<FilterResult>, String)> {
        let path = self.layout.filtered();
        let key = json!({
            "upstream": upstream,
            "ipv": self.cfg.ipv,
            "backend": fingerprint(self.cfg.llm.verifier())?,
            "retrieval": self.retrieval_key()?,
        });
        self.stage(
            m,
            Stage::Verify,
            &key,
            || util::file_hash(&path),
            || load_aligned::<FilterResult>(&path, gold, |r| &r.question_id),
            || {
                let searcher: Arc<dyn PoolSearcher> = retriever.clone();
                let verifier = Verifier::new(
                    self.clients.verifier.clone(),
                    searcher,
                    store.clone(),
                    self.cfg.ipv.clone(),
                )?;
                let (results, secs) = self.per_question(gold, |i, _| {
                    let r = verifier.filter_candidates(&candidates[i], &plans[i], &pools[i])?;
                    debug_assert!(r.retained.len() <= candidates[i].candidates.len());
                    Ok(r)
                })?;
                util::write_jsonl(&path, &results)?;
                let lines: Vec<VerdictLine> = results
                    .iter()
                    .flat_map(|r| {
                        r.verdicts.iter().map(|v| VerdictLine {
                            question_id: &r.question_id,
                            verdict: v,
                        })
                    })
                    .collect();
                util::write_jsonl(&self.layout.verdicts(), &lines)?;
                Ok((results, secs))
            },
        )
    }

    /// Settings echoed into the metrics report. Paths are left out so the
    /// report only depends on what can change the numbers.
    fn config_echo(&self, dataset_hash: &str, corpus_hash: &str) -> Value {
        json!({
            "corpus_id": self.cfg.corpus.corpus_id,
            "corpus_hash": corpus_hash,
            "dataset_hash": dataset_hash,
            "seed": self.cfg.run.seed,
            "retrieval": self.cfg.retrieval,
            "reader": self.cfg.reader,
            "ipv": self.cfg.ipv,
            "eval": self.cfg.eval,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn stage_evaluate(
        &self,
        m: &mut RunManifest,
        gold: &[GoldRecord],
        dataset_hash: &str,
        answers_hash: &str,
        pools_hash: &str,
        finals: &[&[AnswerCandidate]],
        pools: &[RetrievalPool],
        store: &PassageStore,
    ) -> Result<MetricsReport> {
        let path = self.layout.metrics();
        let echo = self.config_echo(dataset_hash, &store.manifest().content_hash);
        let key = json!({
            "echo": echo,
            "answers": answers_hash,
            "pools": pools_hash,
            "judge": if self.cfg.eval.judge { fingerprint(self.cfg.llm.judge())? } else { Value::Null },
        });
        let (report, _) = self.stage(
            m,
            Stage::Evaluate,
            &key,
            || util::file_hash(&path),
            || util::read_json::<MetricsReport>(&path),
            || {
                let (per_question, secs) = self.per_question(gold, |i, g| {
                    let preds: Vec<&str> = finals[i].iter().map(|c| c.surface.as_str()).collect();
                    let metrics = match &self.clients.judge {
                        Some(judge) => eval::score_question_with_judge(&preds, g, judge)?,
                        None => eval::score_question(&preds, g),
                    };
                    Ok(QuestionMetrics {
                        question_id: g.question.id.clone(),
                        predictions: preds.len(),
                        metrics,
                    })
                })?;
                let mut report = MetricsReport::new(per_question, echo.clone())?;
                let cutoffs: BTreeSet<usize> = self
                    .cfg
                    .eval
                    .arecall_k
                    .iter()
                    .copied()
                    .chain([self.cfg.retrieval.top_k])
                    .collect();
                for k in cutoffs {
                    let total = gold
                        .iter()
                        .zip(pools)
                        .map(|(g, p)| eval::arecall_at_k(p, g, k, store))
                        .sum::<Result<f64>>()?;
                    report.arecall_at_k.insert(k, total / gold.len() as f64);
                }
                util::write_json_pretty(&path, &report)?;
                Ok((report, secs))
            },
        )?;
        Ok(report)
    }
}

/// Reads a per-question artifact and checks it lines up with `gold`.
fn load_aligned<T: serde::de::DeserializeOwned>(
    path: &Path,
    gold: &[GoldRecord],
    id: impl Fn(&T) -> &String,
) -> Result<Vec<T>> {
    let items: Vec<T> = util::read_jsonl(path)?;
    let aligned = items.len() == gold.len()
        && items.iter().zip(gold).all(|(item, g)| *id(item) == g.question.id);
    if !aligned {
        return Err(Error::Contract(format!(
            "{} does not match the dataset's questions",
            path.display()
        )));
    }
    Ok(items)
}
