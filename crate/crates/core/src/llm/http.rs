//! OpenAI-compatible HTTP backend (`/chat/completions`, `/embeddings`).

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendSpec, ChatMessage, ChatRequest, LlmBackend, LlmError, TokenProb};

#[derive(Debug)]
pub struct HttpBackend {
    http: reqwest::blocking::Client,
    base_url: String,
    model_id: String,
    api_key: Option<String>,
    top_logprobs: u32,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_logprobs: Option<u32>,
}

#[derive(Deserialize, Debug)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize, Debug)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize, Debug)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Debug)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Deserialize, Debug, Clone)]
pub(crate) struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize, Debug, Clone)]
pub(crate) struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Deserialize, Debug)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize, Debug)]
struct EmbeddingDatum {
    #[serde(default)]
    index: usize,
    embedding: Vec<f32>,
}

impl HttpBackend {
    pub fn from_spec(spec: &BackendSpec) -> Result<Self, LlmError> {
        let base_url = spec
            .base_url
            .clone()
            .ok_or_else(|| LlmError::InvalidRequest("http backend requires base_url".into()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(spec.timeout())
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            model_id: spec.model_id.clone(),
            api_key: std::env::var(&spec.api_key_env).ok().filter(|k| !k.is_empty()),
            top_logprobs: spec.top_logprobs,
        })
    }

    fn post<T: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<T, LlmError> {
        let url = format!("{}/{}", self.base_url, path);
        let mut req = self.http.post(&url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(map_reqwest)?;
        let status = resp.status();
        let text = resp.text().map_err(map_reqwest)?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Protocol(format!("{url}: {e}")))
    }

    fn chat(&self, request: &ChatRequest, with_logprobs: bool) -> Result<Choice, LlmError> {
        let model = if request.model_id.is_empty() {
            &self.model_id
        } else {
            &request.model_id
        };
        let body = ChatBody {
            model,
            messages: &request.messages,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            logprobs: with_logprobs.then_some(true),
            top_logprobs: with_logprobs.then_some(self.top_logprobs),
        };
        let body = serde_json::to_value(&body).map_err(|e| LlmError::Protocol(e.to_string()))?;
        let resp: ChatResponse = self.post("chat/completions", &body)?;
        resp.choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Protocol("response has no choices".into()))
    }
}

fn map_reqwest(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::Transport(e.to_string())
    }
}

/// Index of the first token carrying answer content: whitespace tokens and
/// pieces of a leading `Answer:` are skipped.
pub(crate) fn first_content_position(tokens: &[TokenLogprob]) -> Option<usize> {
    const PREFIX: &str = "answer:";
    let mut consumed = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if t.token.trim().is_empty() {
            consumed.push_str(&t.token);
            continue;
        }
        let so_far = format!("{consumed}{}", t.token).trim().to_lowercase();
        if PREFIX.starts_with(so_far.as_str()) {
            consumed.push_str(&t.token);
            continue;
        }
        return Some(i);
    }
    None
}

pub(crate) fn distribution_at(tokens: &[TokenLogprob], pos: usize) -> Vec<TokenProb> {
    let t = &tokens[pos];
    if t.top_logprobs.is_empty() {
        return vec![TokenProb {
            token: t.token.clone(),
            probability: t.logprob.exp(),
        }];
    }
    t.top_logprobs
        .iter()
        .map(|c| TokenProb {
            token: c.token.clone(),
            probability: c.logprob.exp(),
        })
        .collect()
}

impl LlmBackend for HttpBackend {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let choice = self.chat(request, false)?;
        Ok(choice.message.content.unwrap_or_default())
    }

    fn first_token_distribution(
        &self,
        request: &ChatRequest,
    ) -> Result<Option<Vec<TokenProb>>, LlmError> {
        let choice = self.chat(request, true)?;
        let Some(tokens) = choice.logprobs.and_then(|l| l.content) else {
            return Ok(None);
        };
        Ok(first_content_position(&tokens).map(|pos| distribution_at(&tokens, pos)))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, LlmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.model_id, "input": texts });
        let mut resp: EmbeddingResponse = self.post("embeddings", &body)?;
        resp.data.sort_by_key(|d| d.index);
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }

    fn identity(&self) -> String {
        format!("http:{}:{}", self.base_url, self.model_id)
    }
}
