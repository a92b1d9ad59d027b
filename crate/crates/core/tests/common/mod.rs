//! A 12-passage novel corpus with one question, three gold answers and a
//! scripted stub backend whose verdicts follow a fixed truth table.
//!
//! Reading all 12 passages yields six candidates: three correct
//! (G1-G3) and three wrong (W1-W3). Verdict outcomes:
//!
//! | cand | cat | f1 | f2 (source only) | f2 (+extra) | self-reflection |
//! |------|-----|----|------------------|-------------|-----------------|
//! | G1   | T   | T  | T                | T           | T               |
//! | G2   | T   | T  | T                | T           | T               |
//! | G3   | T   | T  | F                | T           | F               |
//! | W1   | T   | T  | F                | F           | F               |
//! | W2   | F   | T  | T                | T           | F               |
//! | W3   | F   | F  | F                | F           | T               |

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use multiqa_core::corpus::{chunk_document, Passage, PassageStore};
use multiqa_core::eval::{write_gold, GoldAnswer, GoldRecord};
use multiqa_core::ipv::{self, instantiate, IpvConfig, VerificationQuestion};
use multiqa_core::llm::StubScript;
use multiqa_core::orchestrator::RunConfig;
use multiqa_core::prompts;
use multiqa_core::reader::{render_reading_prompt, AnswerCandidate, Question, ReaderSettings, ReadingMode};
use multiqa_core::retrieval::{Bm25Index, Bm25Params, PoolSearcher, RetrievalPool, Retriever, RetrieverKind};

pub const QUESTION_ID: &str = "q-ada-quill";
pub const QUESTION: &str = "Which novels were written by Ada Quill and published by Harbor Press?";

pub const G1: &str = "The Salt Orchard";
pub const G2: &str = "Lanterns of Brisk";
pub const G3: &str = "Winter Ledger";
pub const W1: &str = "The Copper Gate";
pub const W2: &str = "Ada Quill";
pub const W3: &str = "Tidewater Almanac";

pub const VQG_RESPONSE: &str = "Thought: The first question should confirm that the answer is a novel. The next two check the author and the publisher named in the question.\nVerification Questions: \n* Is \"[answer]\" a novel?\n* Was the novel \"[answer]\" written by Ada Quill?\n* Was the novel \"[answer]\" published by Harbor Press?";

const ABSTAIN: &str = "There is no answer.";

/// (doc id, title, text, scripted reader response)
pub const DOCS: [(&str, &str, &str, &str); 12] = [
    ("d01", "The Salt Orchard", "The Salt Orchard is a novel written by Ada Quill. It was published by Harbor Press in 1998 and follows a family of orchard keepers on a windswept coast.", "* The Salt Orchard"),
    ("d02", "Lanterns of Brisk", "Lanterns of Brisk is a 2001 novel by Ada Quill, published by Harbor Press. The story is set in the canal town of Brisk.", "* Lanterns of Brisk"),
    ("d03", "Winter Ledger", "Winter Ledger is a novel written by Ada Quill about a bookkeeper who audits a failing mountain inn.", "* Winter Ledger"),
    ("d04", "Harbor Press catalogue", "Harbor Press published Winter Ledger in 2004 as the lead title of its autumn fiction list.", ABSTAIN),
    ("d05", "The Copper Gate", "The Copper Gate is a novel written by Ada Quill. It was published by Northwind Books in 2007.", "* The Copper Gate"),
    ("d06", "Ada Quill", "Ada Quill is a British author whose early novels appeared with Harbor Press. She lives in Falmouth.", "* Ada Quill"),
    ("d07", "Tidewater Almanac", "Tidewater Almanac is a collection of poems about harbor life, printed by a small press in Bristol.", "* Tidewater Almanac"),
    ("d08", "Coastal fiction", "Critics often pair The Salt Orchard with other coastal novels published by Harbor Press during the 1990s.", "Sure:\n* The Salt Orchard"),
    ("d09", "Harbor Press", "Harbor Press is an independent publisher founded in 1979. It publishes literary fiction and essays.", ABSTAIN),
    ("d10", "Northwind Books", "Northwind Books is a publisher of crime novels and travel writing based in Leeds.", "there is no answer"),
    ("d11", "Quill pens", "A quill is a writing tool made from a moulted flight feather of a large bird.", ABSTAIN),
    ("d12", "Literary prizes", "Several novels written by first-time authors were shortlisted for the Harbor Prize.", ABSTAIN),
];

pub fn question() -> Question {
    Question::new(QUESTION_ID, QUESTION)
}

pub fn gold() -> GoldRecord {
    GoldRecord::new(
        question(),
        vec![
            GoldAnswer::new([G1]).unwrap(),
            GoldAnswer::new([G2, "Lanterns Of Brisk (novel)"]).unwrap(),
            GoldAnswer::new([G3, "The Winter Ledger"]).unwrap(),
        ],
    )
    .unwrap()
}

pub fn passages() -> Vec<Passage> {
    DOCS.iter()
        .flat_map(|(id, title, text, _)| chunk_document(id, title, text, 100).unwrap())
        .collect()
}

pub fn passage_id(doc: &str) -> String {
    Passage::passage_id(doc, 0)
}

/// Which verdict slot a scripted outcome belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Categorical,
    Author,
    PublisherSourceOnly,
    PublisherWithExtra,
    AuthorWithExtra,
    SelfReflection,
}

pub fn truth(candidate: &str, slot: Slot) -> bool {
    use Slot::*;
    let row = match candidate {
        G1 | G2 => [true, true, true, true, true],
        G3 => [true, true, false, true, false],
        W1 => [true, true, false, false, false],
        W2 => [false, true, true, true, false],
        W3 => [false, false, false, false, true],
        other => panic!("unknown fixture candidate {other}"),
    };
    match slot {
        Categorical => row[0],
        Author | AuthorWithExtra => row[1],
        PublisherSourceOnly => row[2],
        PublisherWithExtra => row[3],
        SelfReflection => row[4],
    }
}

/// Expected retained sets per configuration, in candidate order.
pub fn expected_full() -> Vec<&'static str> {
    vec![G1, G2, G3]
}

pub struct Built {
    pub store: Arc<PassageStore>,
    pub retriever: Arc<Retriever>,
    pub pool: RetrievalPool,
    /// Candidate surface → source passage (highest-ranked passage reading it).
    pub sources: BTreeMap<&'static str, String>,
    pub script: StubScript,
}

fn candidate_docs() -> Vec<(&'static str, &'static str)> {
    DOCS.iter()
        .filter_map(|(id, _, _, resp)| {
            resp.lines()
                .find_map(|l| l.strip_prefix("* "))
                .map(|c| (*id, c))
        })
        .collect()
}

pub fn all_candidates() -> [&'static str; 6] {
    [G1, G2, G3, W1, W2, W3]
}

fn verdict(script: &mut StubScript, store: &PassageStore, vq: &VerificationQuestion, cand: &AnswerCandidate, evidence: &[String], outcome: bool) {
    let ev: Vec<&Passage> = evidence.iter().map(|id| store.get_passage(id).unwrap()).collect();
    let req = prompts::verification_request(&instantiate(vq, cand), &ev, IpvConfig::default().verify_max_tokens);
    let (t, f) = if outcome { (0.8, 0.15) } else { (0.2, 0.75) };
    script.insert_distribution(&req, &[("True", t), ("False", f), ("Answer", 0.01)]);
}

/// Builds the in-memory corpus, the sparse pool and the full stub script.
pub fn build() -> Built {
    let store = Arc::new(PassageStore::in_memory("fixture", passages()).unwrap());
    let index = Bm25Index::build(&store, Bm25Params::default()).unwrap();
    let retriever = Arc::new(Retriever::new(store.clone(), 60).with_sparse(index));
    let q = question();
    let pool = retriever.build_pool(&q, 1000, RetrieverKind::Sparse).unwrap();
    assert_eq!(pool.len(), 12, "every fixture passage shares a query term");

    let mut script = StubScript::default();
    let settings = ReaderSettings::default();
    for (id, _, _, response) in DOCS {
        let pid = passage_id(id);
        let p = store.get_passage(&pid).unwrap();
        let req = render_reading_prompt(&q, &[p], ReadingMode::Independent, &settings).unwrap();
        script.insert_text(&req, response);
    }

    let cfg = IpvConfig::default();
    script.insert_text(&ipv::vqg_request(&q, cfg.flavor, cfg.vqg_max_tokens), VQG_RESPONSE);
    let plan = ipv::parse_verification_plan(QUESTION_ID, VQG_RESPONSE, cfg.max_factual).unwrap();
    let sr_plan = ipv::self_reflection_plan(&q);

    let rank: BTreeMap<&str, usize> = pool.entries.iter().map(|e| (e.passage_id.as_str(), e.rank)).collect();
    let mut sources: BTreeMap<&'static str, String> = BTreeMap::new();
    for (doc, cand) in candidate_docs() {
        let pid = passage_id(doc);
        let better = sources.get(cand).is_none_or(|cur| rank[pid.as_str()] < rank[cur.as_str()]);
        if better {
            sources.insert(cand, pid);
        }
    }

    let extra = |vq: &VerificationQuestion, cand: &AnswerCandidate, src: &str| -> String {
        let exclude = HashSet::from([src.to_string()]);
        retriever.search_within_pool(&pool, &instantiate(vq, cand), 1, &exclude).unwrap()[0]
            .passage_id
            .clone()
    };

    for surface in all_candidates() {
        let src = sources[surface].clone();
        let cand = AnswerCandidate::new(QUESTION_ID, surface, Some(&src));
        let (cat, author, publisher) = (&plan.vqs[0], &plan.vqs[1], &plan.vqs[2]);
        verdict(&mut script, &store, cat, &cand, std::slice::from_ref(&src), truth(surface, Slot::Categorical));
        verdict(&mut script, &store, author, &cand, std::slice::from_ref(&src), truth(surface, Slot::Author));
        let x = extra(author, &cand, &src);
        verdict(&mut script, &store, author, &cand, &[src.clone(), x], truth(surface, Slot::AuthorWithExtra));
        verdict(&mut script, &store, publisher, &cand, std::slice::from_ref(&src), truth(surface, Slot::PublisherSourceOnly));
        let x = extra(publisher, &cand, &src);
        verdict(&mut script, &store, publisher, &cand, &[src.clone(), x], truth(surface, Slot::PublisherWithExtra));
        let sr = &sr_plan.vqs[0];
        let x = extra(sr, &cand, &src);
        verdict(&mut script, &store, sr, &cand, &[src.clone(), x], truth(surface, Slot::SelfReflection));
    }

    Built {
        store,
        retriever,
        pool,
        sources,
        script,
    }
}

/// On-disk fixture: documents, gold file, stub script and a base config.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub built: Built,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let built = build();
        let root = dir.path();
        let docs: Vec<String> = DOCS
            .iter()
            .map(|(id, title, text, _)| serde_json::json!({ "id": id, "title": title, "text": text }).to_string())
            .collect();
        std::fs::write(root.join("docs.jsonl"), docs.join("\n") + "\n").unwrap();
        write_gold(&root.join("gold.jsonl"), &[gold()]).unwrap();
        built.script.save(&root.join("script.json")).unwrap();
        std::fs::write(root.join("run.toml"), BASE_CONFIG).unwrap();
        Self { dir, built }
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config_path(&self) -> PathBuf {
        self.root().join("run.toml")
    }

    /// Base config with output under `out/<name>`.
    pub fn config(&self, name: &str) -> RunConfig {
        let mut cfg = RunConfig::load(&self.config_path()).unwrap();
        cfg.run.output_dir = self.root().join("out").join(name);
        cfg
    }
}

pub const BASE_CONFIG: &str = r#"[run]
output_dir = "out/default"
max_parallel_questions = 2

[corpus]
corpus_id = "fixture"
source = "docs.jsonl"

[dataset]
path = "gold.jsonl"

[retrieval]
kind = "sparse"
top_k = 12

[llm]
max_concurrency = 4

[llm.reader]
kind = "stub"
script = "script.json"
"#;
