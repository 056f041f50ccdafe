//! Chat-completions over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{AttemptError, Backend, CompletionRequest, GatewayError};

pub const API_KEY_ENV: &str = "EVOLFORGE_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// `base_url` is the API root; requests go to `{base_url}/chat/completions`.
    pub fn new(base_url: &str, api_key: Option<String>) -> Result<Self, GatewayError> {
        let base = base_url.trim().trim_end_matches('/');
        if base.is_empty() {
            return Err(GatewayError::Config("empty backend URL".into()));
        }
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(GatewayError::Config(format!("backend URL must be http(s): {base}")));
        }
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Ok(Self {
            endpoint: format!("{base}/chat/completions"),
            api_key,
            agent,
        })
    }

    /// Like [`HttpBackend::new`], with the key read from `EVOLFORGE_API_KEY`.
    pub fn from_env(base_url: &str) -> Result<Self, GatewayError> {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

pub fn request_body(request: &CompletionRequest) -> Value {
    json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

/// First choice's message content.
pub fn extract_content(body: &Value) -> Option<String> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl Backend for HttpBackend {
    fn name(&self) -> String {
        self.endpoint.clone()
    }

    fn attempt(&self, request: &CompletionRequest, _attempt: u32, timeout: Duration) -> Result<String, AttemptError> {
        let mut builder = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let sent = builder
            .config()
            .timeout_global(Some(timeout))
            .build()
            .send_json(request_body(request));
        let mut response = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Timeout),
            Err(e) => return Err(AttemptError::Failed(e.to_string())),
        };
        let status = response.status().as_u16();
        if status == 429 {
            return Err(AttemptError::RateLimited);
        }
        if status == 408 || status == 504 {
            return Err(AttemptError::Timeout);
        }
        if !(200..300).contains(&status) {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(AttemptError::Failed(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        let body: Value = match response.body_mut().read_json() {
            Ok(v) => v,
            Err(ureq::Error::Timeout(_)) => return Err(AttemptError::Timeout),
            Err(e) => return Err(AttemptError::Failed(format!("bad response body: {e}"))),
        };
        extract_content(&body).ok_or_else(|| AttemptError::Failed("response has no choices[0].message.content".into()))
    }
}
