//! OpenAI-compatible chat-completions transport, as served by vLLM, SGLang,
//! TGI and similar inference servers.

use std::time::Duration;

use async_trait::async_trait;
use reqwest::header::{HeaderName, HeaderValue, RETRY_AFTER};
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest};

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    auth: Option<(HeaderName, HeaderValue)>,
}

impl HttpBackend {
    /// `url` is the full completions route, e.g.
    /// `http://localhost:8000/v1/chat/completions`.
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
            auth: None,
        })
    }

    /// Sends `header: value` on every request. A bare token given for the
    /// `Authorization` header is sent as a bearer token.
    pub fn with_auth(mut self, header: &str, value: &str) -> Result<Self, BackendError> {
        let name = HeaderName::from_bytes(header.as_bytes())
            .map_err(|e| BackendError::InvalidResponse(format!("bad auth header name: {e}")))?;
        let value = if name == reqwest::header::AUTHORIZATION && !value.contains(' ') {
            format!("Bearer {value}")
        } else {
            value.to_string()
        };
        let value = HeaderValue::from_str(&value)
            .map_err(|e| BackendError::InvalidResponse(format!("bad auth header value: {e}")))?;
        self.auth = Some((name, value));
        Ok(self)
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = WireRequest {
            model: &request.model,
            messages: [WireMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some((name, value)) = &self.auth {
            builder = builder.header(name.clone(), value.clone());
        }
        let response = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;

        let status = response.status();
        if !status.is_success() {
            let retry_after = response
                .headers()
                .get(RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            let body = response.text().await.unwrap_or_default();
            return Err(BackendError::Status {
                code: status.as_u16(),
                retry_after,
                body,
            });
        }

        let parsed: WireResponse = response.json().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::InvalidResponse(e.to_string())
            }
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::InvalidResponse("response has no first choice text".into()))
    }
}
