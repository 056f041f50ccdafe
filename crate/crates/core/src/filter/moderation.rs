//! Moderation scanning and removal of flagged turns.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dialogue::Conversation;
use crate::gateway::http::API_KEY_ENV;
use crate::gateway::Role;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModerationError {
    #[error("moderation transport: {0}")]
    Transport(String),
    #[error("moderation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub flagged: bool,
    pub categories: BTreeMap<String, f64>,
}

pub trait ModerationClient: Send + Sync {
    fn batch_limit(&self) -> usize;
    /// One verdict per input, in order.
    fn classify(&self, inputs: &[&str]) -> Result<Vec<Classification>, ModerationError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentinelRule {
    pub token: String,
    pub category: String,
}

/// Mock classifier: flags any text containing one of its tokens, scoring
/// the rule's category 1.0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentinelClassifier {
    #[serde(default = "default_batch")]
    pub batch_limit: usize,
    pub rules: Vec<SentinelRule>,
}

fn default_batch() -> usize {
    32
}

impl SentinelClassifier {
    pub fn new(rules: Vec<SentinelRule>) -> Self {
        Self {
            batch_limit: default_batch(),
            rules,
        }
    }

    pub fn single(token: &str) -> Self {
        Self::new(vec![SentinelRule {
            token: token.into(),
            category: "sentinel".into(),
        }])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModerationError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| ModerationError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ModerationError::Config(format!("{}: {e}", path.display())))
    }
}

impl ModerationClient for SentinelClassifier {
    fn batch_limit(&self) -> usize {
        self.batch_limit.max(1)
    }

    fn classify(&self, inputs: &[&str]) -> Result<Vec<Classification>, ModerationError> {
        Ok(inputs
            .iter()
            .map(|text| {
                let mut categories = BTreeMap::new();
                for rule in &self.rules {
                    let score = if text.contains(&rule.token) { 1.0 } else { 0.0 };
                    let slot = categories.entry(rule.category.clone()).or_insert(0.0);
                    *slot = f64::max(*slot, score);
                }
                Classification {
                    flagged: categories.values().any(|s| *s >= 1.0),
                    categories,
                }
            })
            .collect())
    }
}

/// Client for a `/moderations` endpoint taking `{"input": [...]}` and
/// returning `{"results": [{"flagged", "category_scores"}]}`.
#[derive(Debug, Clone)]
pub struct HttpModeration {
    endpoint: String,
    api_key: Option<String>,
    batch_limit: usize,
    timeout: Duration,
    agent: ureq::Agent,
}

impl HttpModeration {
    pub fn new(base_url: &str, batch_limit: usize, timeout: Duration) -> Result<Self, ModerationError> {
        let base = base_url.trim().trim_end_matches('/');
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ModerationError::Config(format!(
                "moderation URL must be http(s): {base}"
            )));
        }
        Ok(Self {
            endpoint: format!("{base}/moderations"),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            batch_limit: batch_limit.max(1),
            timeout,
            agent: ureq::Agent::config_builder().http_status_as_error(false).build().into(),
        })
    }
}

impl ModerationClient for HttpModeration {
    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn classify(&self, inputs: &[&str]) -> Result<Vec<Classification>, ModerationError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req
            .config()
            .timeout_global(Some(self.timeout))
            .build()
            .send_json(serde_json::json!({ "input": inputs }))
            .map_err(|e| ModerationError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ModerationError::Transport(format!("HTTP {}", resp.status().as_u16())));
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ModerationError::Transport(e.to_string()))?;
        let results = body
            .get("results")
            .and_then(Value::as_array)
            .ok_or_else(|| ModerationError::Transport("no results array".into()))?;
        if results.len() != inputs.len() {
            return Err(ModerationError::Transport(format!(
                "{} results for {} inputs",
                results.len(),
                inputs.len()
            )));
        }
        Ok(results
            .iter()
            .map(|r| Classification {
                flagged: r.get("flagged").and_then(Value::as_bool).unwrap_or(false),
                categories: r
                    .get("category_scores")
                    .and_then(Value::as_object)
                    .map(|m| m.iter().filter_map(|(k, v)| Some((k.clone(), v.as_f64()?))).collect())
                    .unwrap_or_default(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TurnRef {
    pub conversation_id: String,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationVerdict {
    pub utterance: TurnRef,
    pub role: Role,
    pub flagged: bool,
    pub categories: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModerationReport {
    pub scanned_user: usize,
    pub scanned_assistant: usize,
    pub flagged_user: usize,
    pub flagged_assistant: usize,
    pub rate_user: f64,
    pub rate_assistant: f64,
    pub rate_avg: f64,
    pub verdicts: Vec<ModerationVerdict>,
    /// Turns never scanned because the client failed.
    pub unscanned: Vec<TurnRef>,
    pub errors: Vec<String>,
}

impl ModerationReport {
    fn finish(&mut self) {
        let rate = |f: usize, n: usize| if n == 0 { 0.0 } else { f as f64 / n as f64 };
        self.rate_user = rate(self.flagged_user, self.scanned_user);
        self.rate_assistant = rate(self.flagged_assistant, self.scanned_assistant);
        self.rate_avg = (self.rate_user + self.rate_assistant) / 2.0;
    }

    pub fn is_complete(&self) -> bool {
        self.unscanned.is_empty()
    }

    pub fn flagged_refs(&self) -> HashSet<&TurnRef> {
        self.verdicts
            .iter()
            .filter(|v| v.flagged)
            .map(|v| &v.utterance)
            .collect()
    }

    /// Merge reports over disjoint corpora.
    pub fn merge(mut self, other: ModerationReport) -> ModerationReport {
        self.scanned_user += other.scanned_user;
        self.scanned_assistant += other.scanned_assistant;
        self.flagged_user += other.flagged_user;
        self.flagged_assistant += other.flagged_assistant;
        self.verdicts.extend(other.verdicts);
        self.unscanned.extend(other.unscanned);
        self.errors.extend(other.errors);
        self.finish();
        self
    }

    /// Flag-rate table with User / Chatbot / Avg rows.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "| Role    | Flagged rate |").unwrap();
        writeln!(out, "|---------|--------------|").unwrap();
        for (label, rate) in [
            ("User", self.rate_user),
            ("Chatbot", self.rate_assistant),
            ("Avg", self.rate_avg),
        ] {
            writeln!(out, "| {label:<7} | {:>11.2}% |", rate * 100.0).unwrap();
        }
        out
    }
}

/// Scan every turn once, in batches of the client's limit. On a client
/// error the remaining turns are listed as unscanned.
pub fn moderate(conversations: &[Conversation], client: &dyn ModerationClient) -> ModerationReport {
    let mut refs = Vec::new();
    for c in conversations {
        for (i, t) in c.turns.iter().enumerate() {
            refs.push((
                TurnRef {
                    conversation_id: c.id.clone(),
                    turn_index: i,
                },
                t.role,
                t.content.as_str(),
            ));
        }
    }
    let mut report = ModerationReport::default();
    let mut chunks = refs.chunks(client.batch_limit());
    for chunk in chunks.by_ref() {
        let texts: Vec<&str> = chunk.iter().map(|(_, _, t)| *t).collect();
        let verdicts = match client.classify(&texts) {
            Ok(v) if v.len() == texts.len() => v,
            Ok(v) => {
                report
                    .errors
                    .push(format!("{} verdicts for {} inputs", v.len(), texts.len()));
                report.unscanned.extend(chunk.iter().map(|(r, _, _)| r.clone()));
                break;
            }
            Err(e) => {
                report.errors.push(e.to_string());
                report.unscanned.extend(chunk.iter().map(|(r, _, _)| r.clone()));
                break;
            }
        };
        for ((utterance, role, _), v) in chunk.iter().zip(verdicts) {
            match role {
                Role::User => {
                    report.scanned_user += 1;
                    report.flagged_user += usize::from(v.flagged);
                }
                _ => {
                    report.scanned_assistant += 1;
                    report.flagged_assistant += usize::from(v.flagged);
                }
            }
            report.verdicts.push(ModerationVerdict {
                utterance: utterance.clone(),
                role: *role,
                flagged: v.flagged,
                categories: v.categories,
            });
        }
    }
    for chunk in chunks {
        report.unscanned.extend(chunk.iter().map(|(r, _, _)| r.clone()));
    }
    report.finish();
    report
}

/// Cut each conversation before its first flagged turn and trim to end on
/// an assistant turn. Conversations left empty are dropped.
pub fn strip_flagged(conversations: Vec<Conversation>, report: &ModerationReport) -> Vec<Conversation> {
    let mut first_flag: BTreeMap<&str, usize> = BTreeMap::new();
    for r in report.flagged_refs() {
        let slot = first_flag.entry(r.conversation_id.as_str()).or_insert(r.turn_index);
        *slot = (*slot).min(r.turn_index);
    }
    conversations
        .into_iter()
        .filter_map(|mut c| {
            if let Some(&cut) = first_flag.get(c.id.as_str()) {
                c.turns.truncate(cut);
                if c.turns.len() % 2 == 1 {
                    c.turns.pop();
                }
            }
            (!c.turns.is_empty()).then_some(c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{ConversationStatus, Turn};
    use crate::seeds::SeedSource;

    const BAD: &str = "<<FLAG>>";

    fn conv(id: &str, texts: &[&str]) -> Conversation {
        Conversation {
            id: id.into(),
            root: id.into(),
            seed_id: id.into(),
            evol_id: "e".into(),
            source: SeedSource::AyaDataset,
            task: None,
            language: "fr".into(),
            turns: texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i % 2 == 0 {
                        Turn::user(*t, (i > 0).then(|| "challenging".to_string()))
                    } else {
                        Turn::assistant(*t)
                    }
                })
                .collect(),
            status: ConversationStatus::Complete,
            planned_depth: texts.len() / 2 - 1,
            failure: None,
        }
    }

    #[test]
    fn rates_by_role() {
        let mut convs: Vec<_> = (0..100).map(|i| conv(&format!("c{i}"), &["q", "a"])).collect();
        convs[17].turns[0].content = format!("bad {BAD}");
        let report = moderate(&convs, &SentinelClassifier::single(BAD));
        assert_eq!(report.scanned_user, 100);
        assert_eq!(report.scanned_assistant, 100);
        assert!((report.rate_user - 0.01).abs() < 1e-12);
        assert_eq!(report.rate_assistant, 0.0);
        assert!((report.rate_avg - 0.005).abs() < 1e-12);
        assert_eq!(report.verdicts.len(), 200);
        let table = report.render_table();
        assert!(table.contains("| User    |        1.00% |"));
        assert!(table.contains("| Chatbot |        0.00% |"));
        assert!(table.contains("| Avg     |        0.50% |"));
    }

    #[test]
    fn clean_corpus_all_zero() {
        let convs = vec![conv("a", &["q", "a"])];
        let r = moderate(&convs, &SentinelClassifier::single(BAD));
        assert_eq!((r.rate_user, r.rate_assistant, r.rate_avg), (0.0, 0.0, 0.0));
        assert_eq!(strip_flagged(convs.clone(), &r), convs);
    }

    #[test]
    fn strip_prefix_rule() {
        let c = conv("a", &["u1", "a1", BAD, "a2", "u3", "a3"]);
        let d = conv("b", &[BAD, "a1"]);
        let e = conv("c", &["u1", BAD, "u2", "a2"]);
        let clf = SentinelClassifier::single(BAD);
        let report = moderate(&[c.clone(), d.clone(), e.clone()], &clf);
        let out = strip_flagged(vec![c, d, e], &report);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "a");
        assert_eq!(out[0].turns.len(), 2);
        let again = moderate(&out, &clf);
        assert_eq!(again.rate_avg, 0.0);
    }

    struct Flaky {
        ok_batches: usize,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl ModerationClient for Flaky {
        fn batch_limit(&self) -> usize {
            2
        }
        fn classify(&self, inputs: &[&str]) -> Result<Vec<Classification>, ModerationError> {
            let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n >= self.ok_batches {
                return Err(ModerationError::Transport("connection reset".into()));
            }
            SentinelClassifier::single(BAD).classify(inputs)
        }
    }

    #[test]
    fn transport_failure_lists_unscanned() {
        let convs = vec![conv("a", &["q", "a"]), conv("b", &["q", "a"]), conv("c", &["q", "a"])];
        let client = Flaky {
            ok_batches: 1,
            calls: Default::default(),
        };
        let r = moderate(&convs, &client);
        assert_eq!(r.verdicts.len(), 2);
        assert_eq!(r.unscanned.len(), 4);
        assert!(!r.is_complete());
        assert_eq!(r.errors.len(), 1);
    }

    #[test]
    fn sentinel_config_json() {
        let clf: SentinelClassifier = serde_json::from_str(
            r#"{"rules":[{"token":"X1","category":"violence"},{"token":"X2","category":"hate"}]}"#,
        )
        .unwrap();
        assert_eq!(clf.batch_limit, 32);
        let v = clf.classify(&["has X2", "clean"]).unwrap();
        assert!(v[0].flagged);
        assert_eq!(v[0].categories["hate"], 1.0);
        assert_eq!(v[0].categories["violence"], 0.0);
        assert!(!v[1].flagged);
    }
}
