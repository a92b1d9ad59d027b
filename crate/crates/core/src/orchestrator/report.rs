//! Latency summaries and parameter sweeps over finished runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Pipeline, RunConfig, RunManifest, RunOptions, Stage};
use crate::error::{Error, Result};
use crate::util;

/// Mean wall-clock seconds per question for every stage that recorded
/// per-question timings.
pub fn report_latency(manifest: &RunManifest) -> Result<BTreeMap<Stage, f64>> {
    if manifest.question_count == 0 {
        return Err(Error::InvalidInput("run has no questions".into()));
    }
    Ok(manifest
        .stages
        .iter()
        .filter(|(_, r)| !r.per_question_secs.is_empty())
        .map(|(stage, r)| {
            let n = r.per_question_secs.len() as f64;
            (*stage, r.per_question_secs.values().sum::<f64>() / n)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Passages read per question (`retrieval.top_k`).
    K,
    /// Extra evidence passages per factual question (`ipv.k_extra`).
    KExtra,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::KExtra => "k_extra",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: usize) {
        match self {
            SweepAxis::K => cfg.retrieval.top_k = value,
            SweepAxis::KExtra => cfg.ipv.k_extra = value,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepAxis::K),
            "k_extra" | "k-extra" => Ok(SweepAxis::KExtra),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (k or k_extra)"))),
        }
    }
}

/// One point of a sweep; metric columns are empty when the point failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Answer recall of the pool at the point's `top_k`.
    pub arecall: Option<f64>,
    pub llm_calls: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn is_partial(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    /// Writes `sweep_<axis>.json` and `sweep_<axis>.csv` (long format).
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let json_path = dir.join(format!("sweep_{}.json", self.axis));
        util::write_json_pretty(&json_path, self)?;
        let csv_path = dir.join(format!("sweep_{}.csv", self.axis));
        let mut w = csv::Writer::from_path(&csv_path)
            .map_err(|e| Error::Stage { stage: "sweep".into(), message: e.to_string() })?;
        let csv_err = |e: csv::Error| Error::Stage { stage: "sweep".into(), message: e.to_string() };
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        Ok((json_path, csv_path))
    }
}

/// Runs the pipeline once per value of `axis`, all in the base output
/// directory so upstream artifacts are shared (pools across `k`, candidates
/// and plans across `k_extra`). The LLM response cache is always on. A
/// failing point is recorded as a gap and the sweep continues.
pub fn sweep(cfg: &RunConfig, opts: RunOptions, axis: SweepAxis, values: &[usize]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    let opts = RunOptions {
        resume: true,
        ..opts
    };
    let rows = values
        .iter()
        .map(|&value| {
            let mut point = cfg.clone();
            axis.apply(&mut point, value);
            let outcome = Pipeline::new(point, opts).and_then(|p| p.run());
            match outcome {
                Ok(run) => {
                    let metrics = run.metrics.as_ref();
                    let top_k = run.manifest.config.retrieval.top_k;
                    SweepRow {
                        axis,
                        value,
                        precision: metrics.map(|m| m.macro_avg.precision),
                        recall: metrics.map(|m| m.macro_avg.recall),
                        f1: metrics.map(|m| m.macro_avg.f1),
                        arecall: metrics.and_then(|m| m.arecall_at_k.get(&top_k).copied()),
                        llm_calls: Some(run.manifest.counters.llm_calls()),
                        error: None,
                    }
                }
                Err(e) => {
                    tracing::warn!(%axis, value, error = %e, "sweep point failed");
                    SweepRow {
                        axis,
                        value,
                        precision: None,
                        recall: None,
                        f1: None,
                        arecall: None,
                        llm_calls: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepReport { axis, rows })
}
