//! Chat-completion access: request types, retries, rate limiting, and the
//! HTTP and mock backends.

pub mod cache;
pub mod followup;
pub mod http;
pub mod limiter;
pub mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{fnv1a64, SplitMix64};

pub use cache::ResponseCache;
pub use followup::{parse_followup_json, FollowUpError, FollowUpInstruction, FOLLOWUP_KEY};
pub use http::HttpBackend;
pub use limiter::{Clock, RateLimiter, Semaphore, SystemClock, VirtualClock};
pub use mock::{MockBackend, MockScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid retry policy: {0}")]
    InvalidPolicy(String),
    #[error("backend not configured: {0}")]
    Config(String),
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<Message>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Caller correlation id; part of the fingerprint.
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(messages: Vec<Message>, params: &GenerationParams, temperature: f64, tag: impl Into<String>) -> Self {
        Self {
            messages,
            model: params.model.clone(),
            temperature,
            max_tokens: params.max_tokens,
            tag: tag.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(format!("{}: {m}", self.tag)));
        if self.messages.is_empty() {
            return bad("no messages");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature outside [0, 2]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        let start = usize::from(self.messages[0].role == Role::System);
        for (i, m) in self.messages[start..].iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return bad("roles must alternate user/assistant");
            }
            if m.content.trim().is_empty() {
                return bad("blank message");
            }
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return bad("last message must be from the user");
        }
        Ok(())
    }

    /// Hex SHA-256 over the messages and tag.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::to_vec(&(&self.messages, &self.tag)).expect("messages serialise");
        hex::encode(Sha256::digest(&body))
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionStatus {
    Ok,
    Timeout,
    RateLimited,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub content: String,
    pub status: CompletionStatus,
    pub attempts: u32,
    pub latency: Duration,
    /// Last transport error text, when not ok.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CompletionResult {
    pub fn is_ok(&self) -> bool {
        self.status == CompletionStatus::Ok
    }
}

/// Outcome of a single backend attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    Timeout,
    RateLimited,
    Failed(String),
}

impl AttemptError {
    fn status(&self) -> CompletionStatus {
        match self {
            AttemptError::Timeout => CompletionStatus::Timeout,
            AttemptError::RateLimited => CompletionStatus::RateLimited,
            AttemptError::Failed(_) => CompletionStatus::Failed,
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> String;

    /// One try. `attempt` is 1-based within a single `complete` call.
    fn attempt(&self, request: &CompletionRequest, attempt: u32, timeout: Duration) -> Result<String, AttemptError>;
}

/// Model id and decoding parameters shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub model: String,
    pub instruction_temperature: f64,
    pub response_temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model: "gpt-4".into(),
            instruction_temperature: 0.7,
            response_temperature: 0.3,
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "secs_f64")]
    pub timeout: Duration,
    #[serde(with = "secs_f64")]
    pub base_delay: Duration,
    #[serde(with = "secs_f64")]
    pub max_delay: Duration,
    pub multiplier: f64,
    /// Fractional jitter added on top of each delay, in `[0, 1)`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            timeout: Duration::from_secs(120),
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
            multiplier: 2.0,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidPolicy(m.to_string()));
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        if self.timeout.is_zero() {
            return bad("timeout must be positive");
        }
        if self.multiplier.is_nan() || self.multiplier < 1.0 {
            return bad("multiplier must be >= 1");
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter must be in [0, 1)");
        }
        if self.max_delay < self.base_delay {
            return bad("max_delay below base_delay");
        }
        Ok(())
    }

    /// Waits before attempts 2..=max_attempts. Jitter is seeded from the
    /// request fingerprint, and each delay is at least the previous one.
    pub fn delays(&self, fingerprint: &str) -> Vec<Duration> {
        let mut rng = SplitMix64::new(fnv1a64(fingerprint.as_bytes()));
        let mut out: Vec<Duration> = Vec::new();
        let mut raw = self.base_delay.as_secs_f64();
        for _ in 1..self.max_attempts {
            let jittered = raw * (1.0 + self.jitter * rng.unit_f64());
            let mut d = Duration::from_secs_f64(jittered.min(self.max_delay.as_secs_f64()));
            if let Some(prev) = out.last() {
                d = d.max(*prev);
            }
            out.push(d);
            raw *= self.multiplier;
        }
        out
    }
}

/// Global in-flight ceiling and requests-per-interval budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayLimits {
    pub concurrency: usize,
    /// 0 disables rate limiting.
    pub requests_per_interval: usize,
    #[serde(with = "secs_f64")]
    pub interval: Duration,
}

impl Default for GatewayLimits {
    fn default() -> Self {
        Self {
            concurrency: 8,
            requests_per_interval: 0,
            interval: Duration::from_secs(60),
        }
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    clock: Arc<dyn Clock>,
    limiter: RateLimiter,
    inflight: Semaphore,
    concurrency: usize,
    cache: Option<ResponseCache>,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, limits: &GatewayLimits, clock: Arc<dyn Clock>) -> Self {
        Self {
            backend: Box::new(backend),
            clock,
            limiter: RateLimiter::new(limits.requests_per_interval, limits.interval),
            inflight: Semaphore::new(limits.concurrency),
            concurrency: limits.concurrency.max(1),
            cache: None,
            backend_calls: AtomicU64::new(0),
        }
    }

    /// Mock backend on a virtual clock: retries and rate limits cost no time.
    pub fn mock(script: MockScript, limits: &GatewayLimits) -> Self {
        Self::new(MockBackend::new(script), limits, Arc::new(VirtualClock::new()))
    }

    /// Serve earlier successful completions from `cache` and record new ones.
    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    /// Number of backend attempts issued so far (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    /// Run a request to completion. Transport failures come back as a
    /// non-ok status; only bad requests or policies are errors.
    pub fn complete(
        &self,
        request: &CompletionRequest,
        policy: &RetryPolicy,
    ) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        policy.validate()?;
        let fingerprint = request.fingerprint();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&fingerprint)) {
            return Ok(hit);
        }

        let delays = policy.delays(&fingerprint);
        let started = self.clock.now();
        let mut last = AttemptError::Failed("not attempted".into());
        for attempt in 1..=policy.max_attempts {
            self.limiter.acquire(self.clock.as_ref());
            let outcome = {
                let _permit = self.inflight.acquire();
                self.backend_calls.fetch_add(1, Ordering::Relaxed);
                self.backend.attempt(request, attempt, policy.timeout)
            };
            match outcome {
                Ok(content) if !content.trim().is_empty() => {
                    let result = CompletionResult {
                        content,
                        status: CompletionStatus::Ok,
                        attempts: attempt,
                        latency: self.clock.now().saturating_sub(started),
                        error: None,
                    };
                    if let Some(cache) = &self.cache {
                        cache.put(&fingerprint, &result)?;
                    }
                    return Ok(result);
                }
                Ok(_) => last = AttemptError::Failed("empty completion".into()),
                Err(e) => last = e,
            }
            log::debug!("{} attempt {attempt} failed: {last:?}", request.tag);
            if let Some(d) = delays.get(attempt as usize - 1) {
                self.clock.sleep(*d);
            }
        }
        Ok(CompletionResult {
            content: String::new(),
            status: last.status(),
            attempts: policy.max_attempts,
            latency: self.clock.now().saturating_sub(started),
            error: match last {
                AttemptError::Failed(m) => Some(m),
                _ => None,
            },
        })
    }
}

/// Durations as fractional seconds in config files.
pub(crate) mod secs_f64 {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}
