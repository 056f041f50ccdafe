//! Repetition and length screening, plus moderation.

pub mod moderation;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dialogue::Conversation;
use crate::evol::EvolRecord;

pub use moderation::{
    moderate, strip_flagged, HttpModeration, ModerationClient, ModerationError, ModerationReport, ModerationVerdict,
    SentinelClassifier, SentinelRule,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub flagged: bool,
    /// Most frequent n-gram (lexicographically smallest on ties); empty if
    /// the text has fewer than `n` tokens.
    pub worst_ngram: Vec<String>,
    pub count: usize,
    pub n: usize,
}

/// Count every contiguous word n-gram of the lowercased text and flag it
/// when any n-gram occurs at least `threshold` times.
pub fn ngram_repetition_flag(text: &str, n: usize, threshold: usize) -> RepetitionReport {
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    let mut counts: HashMap<&[&str], usize> = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let worst = counts
        .into_iter()
        .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)));
    let (worst_ngram, count) = match worst {
        Some((gram, c)) => (gram.iter().map(|s| s.to_string()).collect(), c),
        None => (Vec::new(), 0),
    };
    RepetitionReport {
        flagged: count > 0 && count >= threshold,
        worst_ngram,
        count,
        n,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub n: usize,
    pub threshold: usize,
    /// Inclusive whitespace-token bounds applied to every text.
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            n: 4,
            threshold: 3,
            min_tokens: 1,
            max_tokens: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum DropReason {
    Repetition {
        field: String,
        ngram: Vec<String>,
        count: usize,
    },
    TooShort {
        field: String,
        tokens: usize,
    },
    TooLong {
        field: String,
        tokens: usize,
    },
}

/// Something with named texts to screen.
pub trait Screenable {
    fn screen_id(&self) -> &str;
    fn texts(&self) -> Vec<(String, &str)>;
}

impl Screenable for EvolRecord {
    fn screen_id(&self) -> &str {
        &self.id
    }

    fn texts(&self) -> Vec<(String, &str)> {
        let mut out = vec![("instruction".to_string(), self.instruction.as_str())];
        if let Some(r) = &self.response {
            out.push(("response".to_string(), r.as_str()));
        }
        out
    }
}

impl Screenable for Conversation {
    fn screen_id(&self) -> &str {
        &self.id
    }

    fn texts(&self) -> Vec<(String, &str)> {
        self.turns
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("turn-{i}"), t.content.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped<T> {
    pub item: T,
    pub reasons: Vec<DropReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome<T> {
    pub kept: Vec<T>,
    pub dropped: Vec<Dropped<T>>,
}

impl<T> FilterOutcome<T> {
    /// Drop counts keyed by reason kind.
    pub fn reason_counts(&self) -> std::collections::BTreeMap<String, usize> {
        let mut out = std::collections::BTreeMap::new();
        for d in &self.dropped {
            for r in &d.reasons {
                let key = match r {
                    DropReason::Repetition { .. } => "repetition",
                    DropReason::TooShort { .. } => "too-short",
                    DropReason::TooLong { .. } => "too-long",
                };
                *out.entry(key.to_string()).or_insert(0) += 1;
            }
        }
        out
    }
}

pub fn screen(item: &impl Screenable, policy: &FilterPolicy) -> Vec<DropReason> {
    let mut reasons = Vec::new();
    for (field, text) in item.texts() {
        let tokens = text.split_whitespace().count();
        if tokens < policy.min_tokens {
            reasons.push(DropReason::TooShort { field, tokens });
            continue;
        }
        if tokens > policy.max_tokens {
            reasons.push(DropReason::TooLong { field, tokens });
            continue;
        }
        let rep = ngram_repetition_flag(text, policy.n, policy.threshold);
        if rep.flagged {
            reasons.push(DropReason::Repetition {
                field,
                ngram: rep.worst_ngram,
                count: rep.count,
            });
        }
    }
    reasons
}

/// Split items into kept and dropped. Kept items are moved through as-is.
pub fn filter_records<T: Screenable>(records: Vec<T>, policy: &FilterPolicy) -> FilterOutcome<T> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for item in records {
        let reasons = screen(&item, policy);
        if reasons.is_empty() {
            kept.push(item);
        } else {
            dropped.push(Dropped { item, reasons });
        }
    }
    FilterOutcome { kept, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_trigram() {
        let r = ngram_repetition_flag("the cat sat the cat sat the cat sat", 3, 3);
        assert!(r.flagged);
        assert_eq!(r.worst_ngram, ["the", "cat", "sat"]);
        assert_eq!(r.count, 3);
    }

    #[test]
    fn degenerate_inputs() {
        let r = ngram_repetition_flag("hello", 2, 2);
        assert!(!r.flagged);
        assert!(r.worst_ngram.is_empty());
        assert_eq!(r.count, 0);
        assert!(!ngram_repetition_flag("a b c d e", 2, 2).flagged);
        assert!(!ngram_repetition_flag("", 1, 2).flagged);
    }

    #[test]
    fn tie_breaks_lexicographically() {
        let r = ngram_repetition_flag("b a b a", 1, 2);
        assert_eq!(r.worst_ngram, ["a"]);
        assert_eq!(r.count, 2);
        let r = ngram_repetition_flag("Dog dog DOG", 1, 3);
        assert!(r.flagged);
        assert_eq!(r.worst_ngram, ["dog"]);
    }
}
