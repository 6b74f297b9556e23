//! Chat-completion client abstraction and its HTTP implementation.
//!
//! The endpoint speaks the common chat-completions wire shape: a JSON body
//! with `model`, `messages`, `temperature`, and `max_tokens`, answered with
//! `choices[0].message.content`. The base URL comes from `LLMX_BASE_URL` and
//! the bearer token from `LLMX_API_KEY`.

use serde_json::json;
use thiserror::Error;

pub const ENV_BASE_URL: &str = "LLMX_BASE_URL";
pub const ENV_API_KEY: &str = "LLMX_API_KEY";

#[derive(Debug, Error, Clone)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(&'static str),
}

impl ClientError {
    /// Transient failures worth a retry: transport errors, rate limits, and
    /// server-side errors.
    pub fn retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// One chat completion request.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
    pub max_tokens: usize,
}

/// Anything that can answer a chat prompt with raw text.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;
}

/// Blocking HTTP client against an OpenAI-compatible chat endpoint.
pub struct HttpChatClient {
    url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        let trimmed = base_url.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        Self {
            url,
            api_key,
            http: reqwest::blocking::Client::new(),
        }
    }

    pub fn from_env() -> Result<Self, ClientError> {
        let base = std::env::var(ENV_BASE_URL).map_err(|_| ClientError::MissingEnv(ENV_BASE_URL))?;
        let key = std::env::var(ENV_API_KEY).ok();
        Ok(Self::new(&base, key))
    }

    pub fn endpoint(&self) -> &str {
        &self.url
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut builder = self.http.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                code: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| {
                ClientError::MalformedResponse(
                    "missing choices[0].message.content".to_string(),
                )
            })
    }
}
