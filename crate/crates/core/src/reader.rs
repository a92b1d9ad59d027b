//! Reading stage: turns the top of a passage pool into a candidate answer set.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageStore};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, LlmClient};
use crate::prompts;
use crate::retrieval::RetrievalPool;
use crate::util;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Simple,
    Intersection,
    Composition,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub dataset_tag: String,
    #[serde(default)]
    pub question_type: QuestionType,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            dataset_tag: String::new(),
            question_type: QuestionType::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadingMode {
    #[default]
    Independent,
    Concatenated,
    ClosedBook,
}

impl fmt::Display for ReadingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadingMode::Independent => "independent",
            ReadingMode::Concatenated => "concatenated",
            ReadingMode::ClosedBook => "closed_book",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub surface: String,
    pub normalized: String,
    /// Passage the answer was first read from; `None` when the reading mode
    /// has no per-passage provenance.
    pub source_passage_id: Option<String>,
    #[serde(default, skip_serializing)]
    pub question_id: String,
}

impl AnswerCandidate {
    pub fn new(question_id: &str, surface: &str, source: Option<&str>) -> Self {
        Self {
            surface: surface.to_string(),
            normalized: normalize_answer(surface),
            source_passage_id: source.map(str::to_string),
            question_id: question_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub question_id: String,
    pub mode: ReadingMode,
    pub passages_read: usize,
    pub candidates: Vec<AnswerCandidate>,
}

impl CandidateSet {
    /// Restores per-candidate question ids after deserialization.
    pub fn fill_question_ids(&mut self) {
        for c in &mut self.candidates {
            c.question_id = self.question_id.clone();
        }
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.surface.clone()).collect()
    }
}

/// Trim, collapse internal whitespace, case-fold.
pub fn normalize_answer(surface: &str) -> String {
    util::collapse_whitespace(surface).to_lowercase()
}

fn is_abstention(text: &str) -> bool {
    let letters: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    util::collapse_whitespace(&letters).contains("there is no answer")
}

/// Bullet body with markdown emphasis asterisks (`* **Title**`) removed.
pub(crate) fn strip_bullet(line: &str) -> Option<&str> {
    let line = line.trim();
    let rest = match (line.strip_prefix('*'), line.strip_prefix('-')) {
        (Some(rest), _) => rest,
        (None, Some(rest)) if rest.starts_with(char::is_whitespace) => rest,
        _ => return None,
    };
    Some(rest.trim().trim_matches('*').trim())
}

/// Extracts answers from a bulleted reader response.
///
/// Lines starting with `*` (or `- `) are answers; bullets win over an
/// abstention sentence elsewhere in the text. Anything else yields `[]`.
pub fn parse_answer_list(raw: &str) -> Vec<String> {
    let answers: Vec<String> = raw
        .lines()
        .filter_map(strip_bullet)
        .filter(|a| !a.is_empty() && !is_abstention(a))
        .map(str::to_string)
        .collect();
    if answers.is_empty() && !raw.trim().is_empty() && !is_abstention(raw) {
        tracing::warn!(response = raw, "reader response has no bullets; treating as abstention");
    }
    answers
}

/// Unions per-passage answers in the given order, keeping the first surface
/// and source for each normalized form.
pub fn union_answers<'a, I>(question_id: &str, per_source: I) -> Vec<AnswerCandidate>
where
    I: IntoIterator<Item = (Option<&'a str>, Vec<String>)>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (source, answers) in per_source {
        for a in answers {
            let c = AnswerCandidate::new(question_id, &a, source);
            if c.normalized.is_empty() {
                continue;
            }
            if seen.insert(c.normalized.clone()) {
                out.push(c);
            }
        }
    }
    out
}

fn default_max_tokens() -> u32 {
    512
}
fn default_failure_budget() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderSettings {
    #[serde(default)]
    pub mode: ReadingMode,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    /// Largest tolerated fraction of failed per-passage reads.
    #[serde(default = "default_failure_budget")]
    pub failure_budget: f64,
}

impl Default for ReaderSettings {
    fn default() -> Self {
        Self {
            mode: ReadingMode::Independent,
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            failure_budget: default_failure_budget(),
        }
    }
}

pub fn render_reading_prompt(
    question: &Question,
    passages: &[&Passage],
    mode: ReadingMode,
    settings: &ReaderSettings,
) -> Result<ChatRequest> {
    let content = match (mode, passages.len()) {
        (ReadingMode::Independent, 1) | (ReadingMode::Concatenated, 1..) => {
            prompts::reading_prompt(&question.text, passages)
        }
        (ReadingMode::ClosedBook, 0) => prompts::closed_book_prompt(&question.text),
        (mode, n) => {
            return Err(Error::Contract(format!(
                "{mode} reading cannot take {n} passage(s)"
            )))
        }
    };
    let mut req = ChatRequest::single_user(content);
    req.max_tokens = settings.max_tokens;
    req.temperature = settings.temperature;
    Ok(req)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome {
    pub set: CandidateSet,
    /// Passages whose read failed and contributed nothing.
    pub failed_passages: Vec<String>,
}

pub struct Reader {
    client: LlmClient,
    store: Arc<PassageStore>,
    settings: ReaderSettings,
}

impl Reader {
    pub fn new(client: LlmClient, store: Arc<PassageStore>, settings: ReaderSettings) -> Self {
        Self {
            client,
            store,
            settings,
        }
    }

    pub fn settings(&self) -> &ReaderSettings {
        &self.settings
    }

    pub fn read(&self, question: &Question, pool: &RetrievalPool, k: usize) -> Result<ReadOutcome> {
        match self.settings.mode {
            ReadingMode::Independent => self.read_independent(question, pool, k),
            ReadingMode::Concatenated => self.read_concatenated(question, pool, k),
            ReadingMode::ClosedBook => self.read_closed_book(question),
        }
    }

    fn top_passages(&self, pool: &RetrievalPool, k: usize) -> Result<Vec<&Passage>> {
        pool.top_k(k)
            .iter()
            .map(|e| self.store.get_passage(&e.passage_id))
            .collect()
    }

    /// One call per top-k passage; answers are unioned in rank order.
    pub fn read_independent(
        &self,
        question: &Question,
        pool: &RetrievalPool,
        k: usize,
    ) -> Result<ReadOutcome> {
        if pool.is_empty() {
            return Err(Error::InvalidInput(format!(
                "pool for `{}` is empty",
                question.id
            )));
        }
        let passages = self.top_passages(pool, k)?;
        let results: Vec<Result<Vec<String>>> = passages
            .par_iter()
            .map(|p| {
                let req =
                    render_reading_prompt(question, &[*p], ReadingMode::Independent, &self.settings)?;
                Ok(parse_answer_list(&self.client.generate(&req)?))
            })
            .collect();

        let mut failed = Vec::new();
        let mut per_source = Vec::with_capacity(passages.len());
        for (p, r) in passages.iter().zip(results) {
            match r {
                Ok(answers) => per_source.push((Some(p.id.as_str()), answers)),
                Err(e) => {
                    tracing::warn!(question = %question.id, passage = %p.id, error = %e, "read failed");
                    failed.push(p.id.clone());
                }
            }
        }
        if failed.len() as f64 > self.settings.failure_budget * passages.len() as f64 {
            return Err(Error::Stage {
                stage: "read".into(),
                message: format!(
                    "{} of {} passage reads failed for question `{}`",
                    failed.len(),
                    passages.len(),
                    question.id
                ),
            });
        }
        Ok(ReadOutcome {
            set: CandidateSet {
                question_id: question.id.clone(),
                mode: ReadingMode::Independent,
                passages_read: passages.len(),
                candidates: union_answers(&question.id, per_source),
            },
            failed_passages: failed,
        })
    }

    /// Baseline: all top-k passages in one prompt, no provenance.
    pub fn read_concatenated(
        &self,
        question: &Question,
        pool: &RetrievalPool,
        k: usize,
    ) -> Result<ReadOutcome> {
        let passages = self.top_passages(pool, k)?;
        let req = render_reading_prompt(question, &passages, ReadingMode::Concatenated, &self.settings)?;
        let answers = parse_answer_list(&self.client.generate(&req)?);
        Ok(ReadOutcome {
            set: CandidateSet {
                question_id: question.id.clone(),
                mode: ReadingMode::Concatenated,
                passages_read: passages.len(),
                candidates: union_answers(&question.id, [(None, answers)]),
            },
            failed_passages: Vec::new(),
        })
    }

    /// Baseline: the model answers from memory.
    pub fn read_closed_book(&self, question: &Question) -> Result<ReadOutcome> {
        let req = render_reading_prompt(question, &[], ReadingMode::ClosedBook, &self.settings)?;
        let answers = parse_answer_list(&self.client.generate(&req)?);
        Ok(ReadOutcome {
            set: CandidateSet {
                question_id: question.id.clone(),
                mode: ReadingMode::ClosedBook,
                passages_read: 0,
                candidates: union_answers(&question.id, [(None, answers)]),
            },
            failed_passages: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::StubScript;
    use crate::retrieval::{RankedPassage, RetrieverKind};
    use proptest::prelude::*;

    #[test]
    fn parses_bulleted_list() {
        assert_eq!(parse_answer_list("* Carrie\n* Misery\n"), ["Carrie", "Misery"]);
        assert_eq!(parse_answer_list("* **Carrie**\n- M*A*S*H\n**\n"), ["Carrie", "M*A*S*H"]);
    }

    #[test]
    fn abstention_parses_to_empty() {
        assert!(parse_answer_list("There is no answer.").is_empty());
        assert!(parse_answer_list("there is NO answer").is_empty());
        assert!(parse_answer_list("").is_empty());
    }

    #[test]
    fn bullets_take_precedence_over_abstention() {
        assert_eq!(
            parse_answer_list("Sure! Here are answers:\n* A\nThere is no answer."),
            ["A"]
        );
    }

    #[test]
    fn dash_bullets_tolerated_and_empty_bullets_dropped() {
        assert_eq!(parse_answer_list("- A\n*\n*   \n-B\n* There is no answer."), ["A"]);
        assert_eq!(parse_answer_list("  *  spaced out  "), ["spaced out"]);
    }

    proptest! {
        #[test]
        fn parse_never_panics_and_strips_markers(raw in "\\PC{0,200}") {
            for a in parse_answer_list(&raw) {
                prop_assert!(!a.is_empty());
                prop_assert_eq!(a.trim(), a.as_str());
                prop_assert!(!a.starts_with('*'));
            }
        }
    }

    #[test]
    fn union_keeps_first_source() {
        let got = union_answers(
            "q",
            [
                (Some("p1"), vec!["A".to_string()]),
                (Some("p2"), vec![]),
                (Some("p3"), vec!["a ".to_string(), "B".to_string()]),
            ],
        );
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].surface.as_str(), got[0].source_passage_id.as_deref()), ("A", Some("p1")));
        assert_eq!((got[1].surface.as_str(), got[1].source_passage_id.as_deref()), ("B", Some("p3")));
    }

    fn passage(id: &str) -> Passage {
        Passage {
            id: id.into(),
            doc_id: id.into(),
            chunk_index: 0,
            title: format!("Doc {id}"),
            text: format!("text of {id}"),
        }
    }

    fn pool(ids: &[&str]) -> RetrievalPool {
        RetrievalPool {
            question_id: "q".into(),
            retriever_id: RetrieverKind::Sparse,
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedPassage {
                    passage_id: id.to_string(),
                    score: 10.0 - i as f64,
                    rank: i + 1,
                })
                .collect(),
            per_retriever_ranks: Default::default(),
        }
    }

    fn setup(responses: &[(&str, &str)]) -> (Reader, Question, RetrievalPool) {
        let ids: Vec<&str> = responses.iter().map(|(id, _)| *id).collect();
        let store =
            Arc::new(PassageStore::in_memory("t", ids.iter().map(|id| passage(id)).collect()).unwrap());
        let q = Question::new("q", "Which things?");
        let settings = ReaderSettings::default();
        let mut script = StubScript::default();
        for (id, resp) in responses {
            let p = store.get_passage(id).unwrap();
            let req = render_reading_prompt(&q, &[p], ReadingMode::Independent, &settings).unwrap();
            script.insert_text(&req, *resp);
        }
        let reader = Reader::new(LlmClient::stub(script), store, settings);
        (reader, q, pool(&ids))
    }

    #[test]
    fn independent_reading_unions_with_first_source() {
        let (reader, q, pool) = setup(&[
            ("p1", "* A"),
            ("p2", "There is no answer."),
            ("p3", "* A\n* B"),
        ]);
        let out = reader.read_independent(&q, &pool, 3).unwrap();
        let got: Vec<_> = out
            .set
            .candidates
            .iter()
            .map(|c| (c.surface.as_str(), c.source_passage_id.as_deref().unwrap()))
            .collect();
        assert_eq!(got, [("A", "p1"), ("B", "p3")]);
        assert_eq!(out.set.passages_read, 3);
        assert!(out.failed_passages.is_empty());
    }

    #[test]
    fn all_abstentions_give_empty_set() {
        let (reader, q, pool) = setup(&[("p1", "There is no answer."), ("p2", "There is no answer.")]);
        let out = reader.read_independent(&q, &pool, 10).unwrap();
        assert!(out.set.candidates.is_empty());
        assert_eq!(out.set.passages_read, 2);
    }

    #[test]
    fn reading_fewer_passages_never_finds_more() {
        let (reader, q, pool) = setup(&[("p1", "* A"), ("p2", "* B\n* A"), ("p3", "* C")]);
        let counts: Vec<usize> = (1..=3)
            .map(|k| reader.read_independent(&q, &pool, k).unwrap().set.candidates.len())
            .collect();
        assert_eq!(counts, [1, 2, 3]);
    }

    #[test]
    fn failure_budget_aborts_when_exceeded() {
        // p2 and p3 are unscripted, so 2 of 3 reads fail
        let (reader, q, mut pool) = setup(&[("p1", "* A"), ("p2", "* B"), ("p3", "* C")]);
        let ok = reader.read_independent(&q, &pool, 1).unwrap();
        assert_eq!(ok.set.candidates.len(), 1);
        pool.entries[1].passage_id = "p1".into();
        let stub = LlmClient::stub(StubScript::default());
        let failing = Reader::new(stub, reader.store.clone(), ReaderSettings::default());
        assert!(matches!(
            failing.read_independent(&q, &pool, 3),
            Err(Error::Stage { .. })
        ));
    }

    #[test]
    fn partial_failures_within_budget_are_reported() {
        let (reader, q, _) = setup(&[("p1", "* A"), ("p2", "* B")]);
        // a third passage exists in the store but has no scripted response
        let mut passages: Vec<Passage> = reader.store.passages().to_vec();
        passages.push(passage("p3"));
        let store = Arc::new(PassageStore::in_memory("t", passages).unwrap());
        let reader = Reader::new(reader.client.clone(), store, ReaderSettings::default());
        let out = reader.read_independent(&q, &pool(&["p1", "p2", "p3"]), 3).unwrap();
        assert_eq!(out.failed_passages, ["p3"]);
        assert_eq!(out.set.candidates.len(), 2);
    }

    #[test]
    fn prompt_arity_is_checked() {
        let q = Question::new("q", "Q?");
        let p = passage("p1");
        let s = ReaderSettings::default();
        assert!(render_reading_prompt(&q, &[], ReadingMode::Independent, &s).is_err());
        assert!(render_reading_prompt(&q, &[&p, &p], ReadingMode::Independent, &s).is_err());
        assert!(render_reading_prompt(&q, &[&p], ReadingMode::ClosedBook, &s).is_err());
        let req = render_reading_prompt(&q, &[], ReadingMode::ClosedBook, &s).unwrap();
        assert!(req.messages[0].content.contains("generate ALL the answers that you know"));
        let p2 = Passage { id: "p2".into(), title: "Second".into(), ..passage("p2") };
        let req = render_reading_prompt(&q, &[&p, &p2], ReadingMode::Concatenated, &s).unwrap();
        let c = &req.messages[0].content;
        assert!(c.find("(Title: Doc p1)").unwrap() < c.find("(Title: Second)").unwrap());
    }

    fn single_prompt_reader(mode: ReadingMode, response: &str) -> (Reader, Question, RetrievalPool) {
        let store = Arc::new(
            PassageStore::in_memory("t", vec![passage("p1"), passage("p2")]).unwrap(),
        );
        let q = Question::new("q", "Which?");
        let settings = ReaderSettings { mode, ..Default::default() };
        let passages: Vec<&Passage> = match mode {
            ReadingMode::ClosedBook => vec![],
            _ => vec![store.get_passage("p1").unwrap(), store.get_passage("p2").unwrap()],
        };
        let req = render_reading_prompt(&q, &passages, mode, &settings).unwrap();
        let mut script = StubScript::default();
        script.insert_text(&req, response);
        (
            Reader::new(LlmClient::stub(script), store, settings),
            q,
            pool(&["p1", "p2"]),
        )
    }

    #[test]
    fn concatenated_reading_has_no_provenance() {
        for (mode, k) in [(ReadingMode::Concatenated, 2), (ReadingMode::ClosedBook, 2)] {
            let (reader, q, pool) = single_prompt_reader(mode, "* A\n* B");
            let out = reader.read(&q, &pool, k).unwrap();
            assert_eq!(out.set.mode, mode);
            assert_eq!(out.set.surfaces(), ["A", "B"]);
            assert!(out.set.candidates.iter().all(|c| c.source_passage_id.is_none()));

            let (reader, q, pool) = single_prompt_reader(mode, "There is no answer.");
            assert!(reader.read(&q, &pool, k).unwrap().set.candidates.is_empty());

            let (reader, q, pool) = single_prompt_reader(mode, "* A\n* a");
            assert_eq!(reader.read(&q, &pool, k).unwrap().set.surfaces(), ["A"]);
        }
    }

    #[test]
    fn candidate_set_wire_format() {
        let set = CandidateSet {
            question_id: "q1".into(),
            mode: ReadingMode::Independent,
            passages_read: 2,
            candidates: vec![AnswerCandidate::new("q1", "Carrie", Some("d#0"))],
        };
        let json = serde_json::to_value(&set).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "question_id": "q1", "mode": "independent", "passages_read": 2,
                "candidates": [{"surface": "Carrie", "normalized": "carrie", "source_passage_id": "d#0"}]
            })
        );
        let mut back: CandidateSet = serde_json::from_value(json).unwrap();
        back.fill_question_ids();
        assert_eq!(back, set);
    }
}
