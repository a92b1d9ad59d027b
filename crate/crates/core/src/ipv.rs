//! Inter-passage verification: per-question verification questions,
//! per-candidate evidence gathering, True/False verdicts and filtering.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageStore};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient, DEFAULT_NEGATIVE_VARIANTS, DEFAULT_POSITIVE_VARIANTS};
use crate::prompts;
use crate::reader::{strip_bullet, AnswerCandidate, CandidateSet, Question};
use crate::retrieval::{PoolSearcher, RetrievalPool};

pub const PLACEHOLDER: &str = "[answer]";
const QUOTED_PLACEHOLDER: &str = "\"[answer]\"";
const NEGATION_TAG: &str = "[negation]";
const SECTION_MARKER: &str = "verification questions:";
const QUOTE_CHARS: [char; 6] = ['"', '\u{201c}', '\u{201d}', '\'', '\u{2018}', '\u{2019}'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VqKind {
    Categorical,
    Factual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationQuestion {
    pub template: String,
    pub kind: VqKind,
    #[serde(default)]
    pub negated: bool,
    pub ordinal: usize,
}

impl VerificationQuestion {
    /// Whether a verdict with this outcome lets the candidate through.
    pub fn passes(&self, outcome: bool) -> bool {
        outcome != self.negated
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    #[default]
    Generated,
    SelfReflection,
    /// Self-reflection substituted after question generation failed twice.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPlan {
    pub question_id: String,
    pub vqs: Vec<VerificationQuestion>,
    #[serde(default)]
    pub raw_generation: String,
    #[serde(default)]
    pub mode: PlanMode,
}

impl VerificationPlan {
    pub fn categorical(&self) -> Option<&VerificationQuestion> {
        self.vqs.iter().find(|v| v.kind == VqKind::Categorical)
    }

    pub fn factual(&self) -> impl Iterator<Item = &VerificationQuestion> {
        self.vqs.iter().filter(|v| v.kind == VqKind::Factual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate_normalized: String,
    pub vq_ordinal: usize,
    pub p_plus: f64,
    pub p_minus: f64,
    pub outcome: bool,
    pub evidence_passage_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub candidate: AnswerCandidate,
    pub failing_ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub question_id: String,
    pub retained: Vec<AnswerCandidate>,
    pub rejected: Vec<RejectedCandidate>,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFlavor {
    #[default]
    Default,
    NegationEnabled,
}

fn default_true() -> bool {
    true
}
fn default_k_extra() -> usize {
    1
}
fn default_max_factual() -> usize {
    4
}
fn default_verify_max_tokens() -> u32 {
    8
}
fn default_vqg_max_tokens() -> u32 {
    256
}
fn default_positive() -> Vec<String> {
    DEFAULT_POSITIVE_VARIANTS.iter().map(|s| s.to_string()).collect()
}
fn default_negative() -> Vec<String> {
    DEFAULT_NEGATIVE_VARIANTS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpvConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_k_extra")]
    pub k_extra: usize,
    #[serde(default)]
    pub skip_categorical: bool,
    #[serde(default)]
    pub skip_factual: bool,
    #[serde(default)]
    pub self_reflection: bool,
    #[serde(default)]
    pub flavor: DatasetFlavor,
    #[serde(default = "default_max_factual")]
    pub max_factual: usize,
    #[serde(default = "default_vqg_max_tokens")]
    pub vqg_max_tokens: u32,
    #[serde(default = "default_verify_max_tokens")]
    pub verify_max_tokens: u32,
    #[serde(default = "default_positive")]
    pub positive_variants: Vec<String>,
    #[serde(default = "default_negative")]
    pub negative_variants: Vec<String>,
}

impl Default for IpvConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k_extra: default_k_extra(),
            skip_categorical: false,
            skip_factual: false,
            self_reflection: false,
            flavor: DatasetFlavor::Default,
            max_factual: default_max_factual(),
            vqg_max_tokens: default_vqg_max_tokens(),
            verify_max_tokens: default_verify_max_tokens(),
            positive_variants: default_positive(),
            negative_variants: default_negative(),
        }
    }
}

impl IpvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.skip_categorical && self.skip_factual {
            return Err(Error::Config(
                "ipv.skip_categorical and ipv.skip_factual together leave nothing to verify; set ipv.enabled = false instead".into(),
            ));
        }
        if self.self_reflection && (self.skip_categorical || self.skip_factual) {
            return Err(Error::Config(
                "ipv.self_reflection cannot be combined with ipv.skip_* switches".into(),
            ));
        }
        if self.max_factual == 0 {
            return Err(Error::Config("ipv.max_factual must be positive".into()));
        }
        if self.positive_variants.is_empty() || self.negative_variants.is_empty() {
            return Err(Error::Config("ipv label variant lists must be non-empty".into()));
        }
        Ok(())
    }
}

/// Rewrites the single `[answer]` placeholder (any case, any quoting) into
/// the canonical double-quoted lowercase form.
fn normalize_placeholder(template: &str) -> Result<String> {
    let lower = template.to_ascii_lowercase();
    let hits: Vec<usize> = lower.match_indices(PLACEHOLDER).map(|(i, _)| i).collect();
    let [at] = hits[..] else {
        return Err(Error::VqgParse(format!(
            "expected exactly one {PLACEHOLDER} placeholder, found {} in `{template}`",
            hits.len()
        )));
    };
    let before = &template[..at];
    let after = &template[at + PLACEHOLDER.len()..];
    let quoted = before.ends_with(QUOTE_CHARS) && after.starts_with(QUOTE_CHARS);
    let (before, after) = if quoted {
        let open = before.chars().next_back().map_or(0, char::len_utf8);
        let close = after.chars().next().map_or(0, char::len_utf8);
        (&before[..before.len() - open], &after[close..])
    } else {
        (before, after)
    };
    Ok(format!("{before}{QUOTED_PLACEHOLDER}{after}"))
}

fn strip_negation_tag(text: &str) -> (String, bool) {
    let trimmed = text.trim_end();
    let lower = trimmed.to_ascii_lowercase();
    match lower.strip_suffix(NEGATION_TAG) {
        Some(rest) => (trimmed[..rest.len()].trim_end().to_string(), true),
        None => (trimmed.to_string(), false),
    }
}

/// Parses a question-generation response into a plan: the first bullet after
/// the section marker is categorical, the rest factual (capped).
pub fn parse_verification_plan(
    question_id: &str,
    raw: &str,
    max_factual: usize,
) -> Result<VerificationPlan> {
    let lower = raw.to_ascii_lowercase();
    let start = lower
        .find(SECTION_MARKER)
        .ok_or_else(|| Error::VqgParse("missing \"Verification Questions:\" section".into()))?;
    let body = &raw[start + SECTION_MARKER.len()..];
    let bullets: Vec<&str> = body
        .lines()
        .filter_map(strip_bullet)
        .filter(|b| !b.is_empty())
        .collect();

    let mut vqs = Vec::with_capacity(bullets.len());
    for (ordinal, bullet) in bullets.iter().enumerate() {
        let (text, mut negated) = strip_negation_tag(bullet);
        let kind = if ordinal == 0 {
            VqKind::Categorical
        } else {
            VqKind::Factual
        };
        if kind == VqKind::Categorical && negated {
            tracing::warn!(question = question_id, "ignoring negation tag on category question");
            negated = false;
        }
        vqs.push(VerificationQuestion {
            template: normalize_placeholder(&text)?,
            kind,
            negated,
            ordinal,
        });
    }
    if vqs.len() < 2 {
        return Err(Error::VqgParse(format!(
            "need a category question and at least one factual question, got {} question(s)",
            vqs.len()
        )));
    }
    if vqs.len() > max_factual + 1 {
        tracing::warn!(
            question = question_id,
            dropped = vqs.len() - max_factual - 1,
            "dropping factual questions beyond the cap"
        );
        vqs.truncate(max_factual + 1);
    }
    Ok(VerificationPlan {
        question_id: question_id.to_string(),
        vqs,
        raw_generation: raw.to_string(),
        mode: PlanMode::Generated,
    })
}

pub fn self_reflection_plan(question: &Question) -> VerificationPlan {
    VerificationPlan {
        question_id: question.id.clone(),
        vqs: vec![VerificationQuestion {
            template: format!(
                "Is {QUOTED_PLACEHOLDER} a correct answer to the question: {}?",
                question.text
            ),
            kind: VqKind::Factual,
            negated: false,
            ordinal: 1,
        }],
        raw_generation: String::new(),
        mode: PlanMode::SelfReflection,
    }
}

pub fn vqg_request(question: &Question, flavor: DatasetFlavor, max_tokens: u32) -> ChatRequest {
    let mut req = ChatRequest::new(prompts::vqg_messages(
        &question.text,
        flavor == DatasetFlavor::NegationEnabled,
    ));
    req.max_tokens = max_tokens;
    req
}

/// One generation per question. A parse failure is retried once past the
/// response cache; a second failure falls back to self-reflection.
pub fn generate_verification_plan(
    client: &LlmClient,
    question: &Question,
    cfg: &IpvConfig,
) -> Result<VerificationPlan> {
    let req = vqg_request(question, cfg.flavor, cfg.vqg_max_tokens);
    let raw = client.generate(&req)?;
    let first_err = match parse_verification_plan(&question.id, &raw, cfg.max_factual) {
        Ok(plan) => return Ok(plan),
        Err(e) => e,
    };
    tracing::warn!(question = %question.id, error = %first_err, "retrying question generation");
    let raw = client.generate_fresh(&req)?;
    match parse_verification_plan(&question.id, &raw, cfg.max_factual) {
        Ok(plan) => Ok(plan),
        Err(e) => {
            tracing::warn!(question = %question.id, error = %e, "falling back to self-reflection");
            let mut plan = self_reflection_plan(question);
            plan.mode = PlanMode::Fallback;
            plan.raw_generation = raw;
            Ok(plan)
        }
    }
}

/// The plan the configuration asks for: self-reflection or generated.
pub fn plan_for_question(
    client: &LlmClient,
    question: &Question,
    cfg: &IpvConfig,
) -> Result<VerificationPlan> {
    if cfg.self_reflection {
        Ok(self_reflection_plan(question))
    } else {
        generate_verification_plan(client, question, cfg)
    }
}

/// Fills the placeholder (and its quotes, already in the template) with the
/// candidate's surface form, unescaped.
pub fn instantiate(vq: &VerificationQuestion, candidate: &AnswerCandidate) -> String {
    vq.template.replacen(PLACEHOLDER, &candidate.surface, 1)
}

/// Retention rule over evaluated questions and their outcomes. Returns the
/// ordinal of the first question that rejects the candidate.
pub fn retention(evaluated: &[(&VerificationQuestion, bool)]) -> std::result::Result<(), usize> {
    match evaluated.iter().find(|(vq, outcome)| !vq.passes(*outcome)) {
        Some((vq, _)) => Err(vq.ordinal),
        None => Ok(()),
    }
}

pub struct Verifier {
    client: LlmClient,
    searcher: Arc<dyn PoolSearcher>,
    store: Arc<PassageStore>,
    cfg: IpvConfig,
}

impl Verifier {
    pub fn new(
        client: LlmClient,
        searcher: Arc<dyn PoolSearcher>,
        store: Arc<PassageStore>,
        cfg: IpvConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            client,
            searcher,
            store,
            cfg,
        })
    }

    pub fn config(&self) -> &IpvConfig {
        &self.cfg
    }

    /// Evidence for one (candidate, question) pair: the source passage, plus
    /// `k_extra` in-pool passages for factual questions.
    pub fn gather_evidence(
        &self,
        candidate: &AnswerCandidate,
        vq: &VerificationQuestion,
        pool: &RetrievalPool,
    ) -> Result<Vec<&Passage>> {
        let Some(source_id) = candidate.source_passage_id.as_deref() else {
            let k = match vq.kind {
                VqKind::Categorical => 1,
                VqKind::Factual => self.cfg.k_extra + 1,
            };
            return self.search(pool, &instantiate(vq, candidate), k, &HashSet::new());
        };
        let mut evidence = vec![self.store.get_passage(source_id)?];
        if vq.kind == VqKind::Factual && self.cfg.k_extra > 0 {
            if pool.is_empty() {
                tracing::warn!(pool = %pool.question_id, "empty pool; verifying with the source passage only");
            } else {
                let exclude = HashSet::from([source_id.to_string()]);
                evidence.extend(self.search(pool, &instantiate(vq, candidate), self.cfg.k_extra, &exclude)?);
            }
        }
        Ok(evidence)
    }

    fn search(
        &self,
        pool: &RetrievalPool,
        query: &str,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<&Passage>> {
        self.searcher
            .search_within_pool(pool, query, k, exclude)?
            .iter()
            .map(|hit| self.store.get_passage(&hit.passage_id))
            .collect()
    }

    fn verdict(
        &self,
        candidate: &AnswerCandidate,
        vq: &VerificationQuestion,
        evidence: &[&Passage],
    ) -> Verdict {
        let (p_plus, p_minus) = if evidence.is_empty() {
            tracing::warn!(candidate = %candidate.surface, ordinal = vq.ordinal, "no evidence; verdict is False");
            (0.0, 0.0)
        } else {
            let req = prompts::verification_request(
                &instantiate(vq, candidate),
                evidence,
                self.cfg.verify_max_tokens,
            );
            match self.client.score_binary(
                &req,
                &self.cfg.positive_variants,
                &self.cfg.negative_variants,
            ) {
                Ok((pos, neg)) => (pos.probability_mass, neg.probability_mass),
                Err(e) => {
                    tracing::warn!(candidate = %candidate.surface, ordinal = vq.ordinal, error = %e, "verdict failed; treating as False");
                    (0.0, 0.0)
                }
            }
        };
        Verdict {
            candidate_normalized: candidate.normalized.clone(),
            vq_ordinal: vq.ordinal,
            p_plus,
            p_minus,
            outcome: p_plus > p_minus,
            evidence_passage_ids: evidence.iter().map(|p| p.id.clone()).collect(),
        }
    }

    /// Questions that the configuration asks to evaluate for this plan.
    fn active<'p>(&self, plan: &'p VerificationPlan) -> (Option<&'p VerificationQuestion>, Vec<&'p VerificationQuestion>) {
        if plan.mode != PlanMode::Generated {
            return (None, plan.vqs.iter().collect());
        }
        let categorical = plan.categorical().filter(|_| !self.cfg.skip_categorical);
        let factual = if self.cfg.skip_factual {
            Vec::new()
        } else {
            plan.factual().collect()
        };
        (categorical, factual)
    }

    /// Categorical question first; a False there rejects without any factual
    /// retrieval. Factual questions are all evaluated, in ordinal order.
    pub fn verify_candidate(
        &self,
        candidate: &AnswerCandidate,
        plan: &VerificationPlan,
        pool: &RetrievalPool,
    ) -> Result<(std::result::Result<(), usize>, Vec<Verdict>)> {
        let (categorical, factual) = self.active(plan);
        let mut verdicts = Vec::with_capacity(factual.len() + 1);
        let mut evaluated = Vec::with_capacity(factual.len() + 1);
        if let Some(vq) = categorical {
            let evidence = self.gather_evidence(candidate, vq, pool)?;
            let v = self.verdict(candidate, vq, &evidence);
            evaluated.push((vq, v.outcome));
            verdicts.push(v);
            if !vq.passes(evaluated[0].1) {
                return Ok((Err(vq.ordinal), verdicts));
            }
        }
        for vq in factual {
            let evidence = self.gather_evidence(candidate, vq, pool)?;
            let v = self.verdict(candidate, vq, &evidence);
            evaluated.push((vq, v.outcome));
            verdicts.push(v);
        }
        Ok((retention(&evaluated), verdicts))
    }

    /// Verifies every candidate (concurrently) and partitions the set,
    /// preserving candidate order.
    pub fn filter_candidates(
        &self,
        candidates: &CandidateSet,
        plan: &VerificationPlan,
        pool: &RetrievalPool,
    ) -> Result<FilterResult> {
        if plan.question_id != candidates.question_id {
            return Err(Error::Contract(format!(
                "plan for `{}` applied to candidates of `{}`",
                plan.question_id, candidates.question_id
            )));
        }
        let outcomes: Vec<_> = candidates
            .candidates
            .par_iter()
            .map(|c| self.verify_candidate(c, plan, pool))
            .collect::<Result<_>>()?;
        let mut result = FilterResult {
            question_id: candidates.question_id.clone(),
            retained: Vec::new(),
            rejected: Vec::new(),
            verdicts: Vec::new(),
        };
        for (candidate, (kept, verdicts)) in candidates.candidates.iter().zip(outcomes) {
            match kept {
                Ok(()) => result.retained.push(candidate.clone()),
                Err(failing_ordinal) => result.rejected.push(RejectedCandidate {
                    candidate: candidate.clone(),
                    failing_ordinal,
                }),
            }
            result.verdicts.extend(verdicts);
        }
        Ok(result)
    }
}

/// Result used when verification is disabled: every candidate is retained.
pub fn passthrough(candidates: &CandidateSet) -> FilterResult {
    FilterResult {
        question_id: candidates.question_id.clone(),
        retained: candidates.candidates.clone(),
        rejected: Vec::new(),
        verdicts: Vec::new(),
    }
}
