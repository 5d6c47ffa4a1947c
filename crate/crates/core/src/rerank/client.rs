//! Remote scorer and generator clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores `(query, passage)` pairs; higher means more related.
pub trait PairScorer: Send + Sync {
    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>>;
}

/// Completes a prompt.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String>;
}

impl<F> PairScorer for F
where
    F: Fn(&[(String, String)]) -> Result<Vec<f64>> + Send + Sync,
{
    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        self(pairs)
    }
}

fn http_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(300))
        .build()
        .expect("http client")
}

fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Req,
) -> Result<Resp> {
    client
        .post(url)
        .json(body)
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(|e| Error::Provider(format!("{url}: {e}")))?
        .json()
        .map_err(|e| Error::Provider(format!("{url}: bad response: {e}")))
}

/// `{"pairs": [[query, passage]]}` → `{"scores": [float]}`.
pub struct HttpScorer {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>) -> Self {
        HttpScorer {
            url: url.into(),
            client: http_client(),
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: &'a [(String, String)],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

impl PairScorer for HttpScorer {
    fn score(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        let resp: ScoreResponse = post_json(&self.client, &self.url, &ScoreRequest { pairs })?;
        Ok(resp.scores)
    }
}

/// `{"prompt": string, "max_tokens": int}` → `{"text": string}`.
pub struct HttpGenerator {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>) -> Self {
        HttpGenerator {
            url: url.into(),
            client: http_client(),
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl TextGenerator for HttpGenerator {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        let resp: CompletionResponse =
            post_json(&self.client, &self.url, &CompletionRequest { prompt, max_tokens })?;
        Ok(resp.text)
    }
}

/// Chat-style endpoint. The prompt becomes the user message; an optional
/// system message precedes it. Accepts either `{"text": ..}` or
/// `{"choices": [{"message": {"content": ..}}]}` back.
pub struct ChatGenerator {
    url: String,
    model: Option<String>,
    system: Option<String>,
    client: reqwest::blocking::Client,
}

impl ChatGenerator {
    pub fn new(url: impl Into<String>, model: Option<String>, system: Option<String>) -> Self {
        ChatGenerator {
            url: url.into(),
            model,
            system,
            client: http_client(),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ChatResponse {
    Plain { text: String },
    Choices { choices: Vec<ChatChoice> },
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    content: String,
}

impl TextGenerator for ChatGenerator {
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        let mut messages = Vec::new();
        if let Some(system) = &self.system {
            messages.push(ChatMessage { role: "system", content: system });
        }
        messages.push(ChatMessage { role: "user", content: prompt });
        let body = ChatRequest {
            model: self.model.as_deref(),
            messages,
            max_tokens,
        };
        match post_json::<_, ChatResponse>(&self.client, &self.url, &body)? {
            ChatResponse::Plain { text } => Ok(text),
            ChatResponse::Choices { choices } => choices
                .into_iter()
                .next()
                .map(|c| c.message.content)
                .ok_or_else(|| Error::Provider(format!("{}: empty choices", self.url))),
        }
    }
}

impl<F> TextGenerator for F
where
    F: Fn(&str, usize) -> Result<String> + Send + Sync,
{
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        self(prompt, max_tokens)
    }
}
