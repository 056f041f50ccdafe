//! Deterministic backend for tests and offline runs.
//!
//! A script lists entries matched by request fingerprint, exact tag or tag
//! prefix. Each entry carries per-attempt steps (the last step repeats).
//! Unmatched requests fall through to an optional hash-based timeout rule
//! and then to the echo rule.

use std::collections::HashSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::followup::FOLLOWUP_KEY;
use super::{AttemptError, Backend, CompletionRequest};
use crate::rng::{fnv1a64, SplitMix64};

/// How many distinct tokens of the prompt the echo keeps.
pub const ECHO_TOKENS: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockStep {
    Ok(String),
    Echo,
    Timeout,
    RateLimited,
    Failed(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockEntry {
    pub fingerprint: Option<String>,
    pub tag: Option<String>,
    pub tag_prefix: Option<String>,
    pub steps: Vec<MockStep>,
}

impl MockEntry {
    pub fn for_fingerprint(fp: impl Into<String>, steps: Vec<MockStep>) -> Self {
        Self {
            fingerprint: Some(fp.into()),
            steps,
            ..Self::default()
        }
    }

    pub fn for_tag(tag: impl Into<String>, steps: Vec<MockStep>) -> Self {
        Self {
            tag: Some(tag.into()),
            steps,
            ..Self::default()
        }
    }

    pub fn for_tag_prefix(prefix: impl Into<String>, steps: Vec<MockStep>) -> Self {
        Self {
            tag_prefix: Some(prefix.into()),
            steps,
            ..Self::default()
        }
    }

    fn matches(&self, fingerprint: &str, tag: &str) -> bool {
        self.fingerprint.as_deref() == Some(fingerprint)
            || self.tag.as_deref() == Some(tag)
            || self.tag_prefix.as_deref().is_some_and(|p| tag.starts_with(p))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
    /// Fraction of unmatched requests that time out on every attempt.
    pub timeout_rate: f64,
    /// Salt for choosing which requests time out.
    pub timeout_seed: u64,
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn with_timeout_rate(rate: f64, seed: u64) -> Self {
        Self {
            timeout_rate: rate,
            timeout_seed: seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    /// Whether the timeout rule selects this fingerprint.
    pub fn times_out(&self, fingerprint: &str) -> bool {
        if self.script.timeout_rate <= 0.0 {
            return false;
        }
        let mut rng = SplitMix64::new(fnv1a64(fingerprint.as_bytes()) ^ self.script.timeout_seed);
        rng.unit_f64() < self.script.timeout_rate
    }
}

/// `mock-<fp12>` followed by the first distinct lowercase words of the last
/// user message. Follow-up prompts get the answer wrapped in the expected
/// JSON object.
pub fn echo(request: &CompletionRequest) -> String {
    let fp = request.fingerprint();
    let last = request.last_user().unwrap_or_default();
    let mut seen = HashSet::new();
    let mut words = Vec::new();
    for raw in last.split_whitespace() {
        let word: String = raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if !word.is_empty() && seen.insert(word.clone()) {
            words.push(word);
            if words.len() == ECHO_TOKENS {
                break;
            }
        }
    }
    let mut body = format!("mock-{}", &fp[..12]);
    for w in &words {
        body.push(' ');
        body.push_str(w);
    }
    if last.contains(FOLLOWUP_KEY) {
        serde_json::json!({ FOLLOWUP_KEY: body }).to_string()
    } else {
        body
    }
}

impl Backend for MockBackend {
    fn name(&self) -> String {
        "mock".into()
    }

    fn attempt(&self, request: &CompletionRequest, attempt: u32, _timeout: Duration) -> Result<String, AttemptError> {
        let fp = request.fingerprint();
        let entry = self.script.entries.iter().find(|e| e.matches(&fp, &request.tag));
        let step = match entry {
            Some(e) if !e.steps.is_empty() => {
                let idx = (attempt as usize).saturating_sub(1).min(e.steps.len() - 1);
                e.steps[idx].clone()
            }
            Some(_) => MockStep::Echo,
            None if self.times_out(&fp) => MockStep::Timeout,
            None => MockStep::Echo,
        };
        match step {
            MockStep::Ok(text) => Ok(text),
            MockStep::Echo => Ok(echo(request)),
            MockStep::Timeout => Err(AttemptError::Timeout),
            MockStep::RateLimited => Err(AttemptError::RateLimited),
            MockStep::Failed(msg) => Err(AttemptError::Failed(msg)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{parse_followup_json, GenerationParams, Message};

    fn req(text: &str, tag: &str) -> CompletionRequest {
        CompletionRequest::new(vec![Message::user(text)], &GenerationParams::default(), 0.7, tag)
    }

    const T: Duration = Duration::from_secs(1);

    #[test]
    fn canned_by_fingerprint_every_call() {
        let r = req("q", "t");
        let mock = MockBackend::new(MockScript {
            entries: vec![MockEntry::for_fingerprint(
                r.fingerprint(),
                vec![MockStep::Ok("A".into())],
            )],
            ..MockScript::default()
        });
        for attempt in 1..4 {
            assert_eq!(mock.attempt(&r, attempt, T), Ok("A".into()));
        }
    }

    #[test]
    fn schedule_then_text() {
        let r = req("q", "t");
        let mock = MockBackend::new(MockScript {
            entries: vec![MockEntry::for_fingerprint(
                r.fingerprint(),
                vec![MockStep::Timeout, MockStep::Ok("B".into())],
            )],
            ..MockScript::default()
        });
        assert_eq!(mock.attempt(&r, 1, T), Err(AttemptError::Timeout));
        assert_eq!(mock.attempt(&r, 2, T), Ok("B".into()));
        assert_eq!(mock.attempt(&r, 3, T), Ok("B".into()));
    }

    #[test]
    fn unmatched_echoes_last_user() {
        let mock = MockBackend::default();
        let r = req("The quick brown fox, the QUICK dog!", "t");
        let out = mock.attempt(&r, 1, T).unwrap();
        assert_eq!(out, format!("mock-{} the quick brown fox dog", &r.fingerprint()[..12]));
        assert_eq!(mock.attempt(&r, 1, T).unwrap(), out);
    }

    #[test]
    fn followup_prompts_get_json() {
        let r = req("Return {\"follow_up_user_prompt\": \"...\"} please", "t");
        let out = MockBackend::default().attempt(&r, 1, T).unwrap();
        assert!(parse_followup_json(&out).unwrap().text.starts_with("mock-"));
    }

    #[test]
    fn timeout_rate_close_to_target() {
        let mock = MockBackend::new(MockScript::with_timeout_rate(0.1, 7));
        let n = 5000;
        let hits = (0..n)
            .filter(|i| mock.times_out(&req(&i.to_string(), "t").fingerprint()))
            .count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.1).abs() < 0.02, "{rate}");
    }

    #[test]
    fn script_json_shape() {
        let script: MockScript = serde_json::from_str(
            r#"{"entries":[{"tag_prefix":"response:","steps":["timeout",{"ok":"fine"}]}],"timeout_rate":0.05}"#,
        )
        .unwrap();
        assert_eq!(
            script.entries[0].steps,
            vec![MockStep::Timeout, MockStep::Ok("fine".into())]
        );
        let mock = MockBackend::new(script);
        assert_eq!(mock.attempt(&req("q", "response:x"), 2, T), Ok("fine".into()));
    }
}
