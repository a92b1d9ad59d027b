//! Prompt templates for reading, verification-question generation,
//! verification and judging.
//!
//! The reading, closed-book, question-generation and verification texts are
//! fixed strings; only the `{...}` slots are substituted. Trailing spaces in
//! them are intentional.

use crate::corpus::Passage;
use crate::llm::{ChatMessage, ChatRequest};

pub const READING_TEMPLATE: &str = concat!(
    "Read the following snippet(s) from Wikipedia documents carefully to find all the correct answers to the question. ",
    "There could be multiple answers, one answer, or no answer. Do NOT generate additional descriptions/aliases/explanations! ",
    "Generate the answers in the form of an unordered list as required below.\n",
    "\n",
    "Start each answer with an asterisk and end with a new line. Your response should be in the following format if there are correct answers supported by the document snippets:\n",
    "\n",
    "* Answer 1\n",
    "* Answer 2\n",
    "...\n",
    "\n",
    "Or, if there is no correct answer, respond literally \"There is no answer.\" without generating an unordered list.\n",
    "\n",
    "REMINDERS:\n",
    "\n",
    "* Please answer the question PURELY based on the documents provided. DO NOT use any additional knowledge not present in the documents.\n",
    "* If the document is irrelevant to the question, do NOT use your own knowledge to answer it and just say \"There is no answer\".\n",
    "* You should either give a list of answers as required above, or say \"There is no answer\". No other forms of response are accepted. \n",
    "\n",
    "Document Snippet(s):\n",
    "{documents}\n",
    "\n",
    "Question: {question} ",
);

pub const CLOSED_BOOK_TEMPLATE: &str = concat!(
    "Given a multi-answer web search question, generate ALL the answers that you know to this question. ",
    "Do NOT generate additional descriptions/aliases/explanations! ",
    "Please generate the answers in the form of an unordered list as required below:  \n",
    "\n",
    "Start each answer with an asterisk and end with a new line. Your response should look like this:\n",
    "* Answer 1\n",
    "* Answer 2\n",
    "...\n",
    "\n",
    "Now answer this question: {question}",
);

pub const VQG_INSTRUCTION: &str = concat!(
    "I am trying to answer questions that have many correct answers. I now have a set of answers for each question but some of them are incorrect and noisy. ",
    "So, based on my web search questions that have many correct answers, generate 2-3 verification questions so that I can use those questions to filter my answer sets. ",
    "Verification questions should always be true-or-false questions. ",
    "I will retain the answer item if an answer item appears true to the question and filter out the answer items otherwise. ",
    "Here are some requirements for your response:\n",
    "* You should always first ask an easy category-checking question to verify whether the answer entity belongs to the correct category.\n",
    "* The second or third question should purely be based on my original web search query. NO questions shall use inferred facts or external knowledge.\n",
    "* Start by thinking about what questions are suitable to ask. Begin your thought with \"Thought: \"\n",
    "* After your thought, begin asking questions after \"Verification Questions: \". Start each question with a new line and an asterisk. Do NOT generate anything else after the questions.\n",
    "* In the verification question, when you refer to the answer item, please leave it as [answer] and enclose it with double quotes so that I can later fill it in with items in my answer set.",
);

/// Extra requirement appended to the instruction for datasets with negated constraints.
pub const VQG_NEGATION_RULE: &str = concat!(
    "* When you try to verify whether an answer does NOT have certain properties or features, ",
    "ask the question in positive form and label the question with a [NEGATION] tag at the end of the question. ",
    "I will retain the answers that appear false to the tagged question. ",
);

pub const VQG_QUESTION_PREFIX: &str = "My web search question: ";

/// (question, assistant reply) few-shot pairs.
pub const VQG_EXEMPLARS_DEFAULT: [(&str, &str); 3] = [
    (
        "Which album has John Reuben as performer?",
        concat!(
            "Thought: To verify if an answer item is a correct album with John Reuben as the performer, the first question should confirm whether the item belongs to the category of music albums. ",
            "The subsequent question should directly relate to the web search query by asking if John Reuben is credited as the performer on the album.\n",
            "Verification Questions: \n",
            "* Is \"[answer]\" a music album?\n",
            "* Is John Reuben credited as a performer on the music album \"[answer]\"?",
        ),
    ),
    (
        "What film was directed by Radha Mohan and produced by Prakash Raj?",
        concat!(
            "Thought: To filter answers effectively, the first question should confirm that the answer is a film. ",
            "The second question will verify if the film was directed by Radha Mohan. The third question will confirm if the film was produced by Prakash Raj.\n",
            "Verification Questions: \n",
            "* Is \"[answer]\" a film?\n",
            "* Was the film \"[answer]\" directed by Radha Mohan?\n",
            "* Was the film \"[answer]\" produced by Prakash Raj?",
        ),
    ),
    (
        "Who was director of a movie penned by Christina Hodson?",
        concat!(
            "Thought: To filter answers effectively, the first question should confirm that the answer is a person. ",
            "The second question will verify if there is a movie written by Christina Hodson and directed by this person.\n",
            "Verification Questions: \n",
            "* Is \"[answer]\" a director's name?\n",
            "* Is there a movie that is directed by \"[answer]\" and written by Christina Hodson?",
        ),
    ),
];

pub const VQG_EXEMPLARS_NEGATION: [(&str, &str); 3] = [
    (
        "What highway system located in Tottori Prefecture is not maintained by Tottori Prefecture",
        concat!(
            "Thought: To verify if an answer item is a correct highway system located in Tottori Prefecture but not maintained by Tottori Prefecture, ",
            "the first question should confirm whether the item belongs to the category of highway system. ",
            "The subsequent questions should check whether this highway system is located in the Tottori Prefecture and meanwhile not maintained by Tottori Prefecture. ",
            "I will use the [NEGATION] tag to filter out the highway systems maintained by the Tottori Prefecture.\n",
            "Verification Questions: \n",
            "* Is \"[answer]\" a highway system?\n",
            "* Is the highway system \"[answer]\" located in Tottori Prefecture?\n",
            "* Is the highway system \"[answer]\" maintained by Tottori Prefecture? [NEGATION]",
        ),
    ),
    (
        "Which Sunni Islam figures weren't Sufist?",
        concat!(
            "Thought: To filter answers effectively, the first question should confirm that the answer is a Sunni Islam figure. ",
            "Then, the second question will verify whether this Sunni Islam figure was Sufist, which I will tag it with [NEGATION].\n",
            "Verification Questions: \n",
            "* Is \"[answer]\" a Sunni Islam figure?\n",
            "* Was the Sunni Islam figure \"[answer]\" Sufist? [NEGATION]",
        ),
    ),
    (
        "People who played for the Sheffield Wednesday F.C. and the Lincoln City F.C.",
        concat!(
            "Thought: To filter answers effectively, the first question should confirm that the answer is a person's name. ",
            "The second question will verify if this person played for Sheffield Wednesday F.C. The third question will check if this person also played for Lincoln City F.C.\n",
            "Verification Questions: \n",
            "* Is \"[answer]\" a person's name?\n",
            "* Has \"[answer]\" ever played for the Sheffield Wednesday F.C.?\n",
            "* Has \"[answer]\" ever played for the Lincoln City F.C.?",
        ),
    ),
];

pub const VERIFICATION_TEMPLATE: &str = concat!(
    "Read the following document(s) carefully to answer the true-or-false question below. ",
    "If the document provided is irrelevant or insufficient, then answer \"False\". ",
    "Answer \"True\" if there is sufficient evidence in the document. ",
    "Do not add additional description or explanation, and the answer can only be \"True\" or \"False\". ",
    "Begin your response with \"Answer: ...\".\n",
    "\n",
    "{documents}\n",
    "\n",
    "Question: {question}\n",
    "\n",
    "Answer: ",
);

pub const JUDGE_TEMPLATE: &str = concat!(
    "You are grading one predicted answer to a question that has several correct answers.\n",
    "\n",
    "Question: {question}\n",
    "\n",
    "Ground-truth answers (index. answer [aliases]):\n",
    "{gold}\n",
    "\n",
    "Predicted answer: {prediction}\n",
    "\n",
    "If the predicted answer refers to the same thing as one of the ground-truth answers, output the ground-truth answer index. ",
    "Otherwise output \"None\". Output only the index or \"None\".",
);

/// `(Title: …) text` snippets, one per line, in the given order.
pub fn render_documents(passages: &[&Passage]) -> String {
    passages
        .iter()
        .map(|p| format!("(Title: {}) {}", p.title, p.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn reading_prompt(question: &str, passages: &[&Passage]) -> String {
    READING_TEMPLATE
        .replace("{documents}", &render_documents(passages))
        .replace("{question}", question)
}

pub fn closed_book_prompt(question: &str) -> String {
    CLOSED_BOOK_TEMPLATE.replace("{question}", question)
}

/// Few-shot question-generation dialogue. The instruction shares the first
/// user turn with the first exemplar question so turns alternate strictly.
pub fn vqg_messages(question: &str, negation: bool) -> Vec<ChatMessage> {
    let instruction = if negation {
        format!("{VQG_INSTRUCTION}\n{VQG_NEGATION_RULE}")
    } else {
        VQG_INSTRUCTION.to_string()
    };
    let exemplars = if negation {
        &VQG_EXEMPLARS_NEGATION
    } else {
        &VQG_EXEMPLARS_DEFAULT
    };
    let mut messages = Vec::with_capacity(exemplars.len() * 2 + 1);
    for (i, (q, reply)) in exemplars.iter().enumerate() {
        let turn = format!("{VQG_QUESTION_PREFIX}{q}");
        let content = if i == 0 {
            format!("{instruction}\n\n{turn}")
        } else {
            turn
        };
        messages.push(ChatMessage::user(content));
        messages.push(ChatMessage::assistant(*reply));
    }
    messages.push(ChatMessage::user(format!("{VQG_QUESTION_PREFIX}{question}")));
    messages
}

pub fn verification_prompt(question: &str, evidence: &[&Passage]) -> String {
    VERIFICATION_TEMPLATE
        .replace("{documents}", &render_documents(evidence))
        .replace("{question}", question)
}

pub fn verification_request(question: &str, evidence: &[&Passage], max_tokens: u32) -> ChatRequest {
    let mut req = ChatRequest::single_user(verification_prompt(question, evidence));
    req.max_tokens = max_tokens;
    req
}

pub fn judge_prompt(question: &str, gold: &[Vec<String>], prediction: &str) -> String {
    let gold_lines = gold
        .iter()
        .enumerate()
        .map(|(i, aliases)| match aliases.split_first() {
            Some((head, rest)) if !rest.is_empty() => format!("{i}. {head} [{}]", rest.join("; ")),
            Some((head, _)) => format!("{i}. {head}"),
            None => format!("{i}."),
        })
        .collect::<Vec<_>>()
        .join("\n");
    JUDGE_TEMPLATE
        .replace("{question}", question)
        .replace("{gold}", &gold_lines)
        .replace("{prediction}", prediction)
}
