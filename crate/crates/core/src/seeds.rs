//! Seed corpora: ingestion, task exclusions and balanced sampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::jsonl::{self, LineRejection};
use crate::rng::SplitMix64;

/// Tasks dropped before sampling: text simplification overlaps with the
/// evol rewrites, and the event-entity task has no consistent format.
pub const DEFAULT_EXCLUDED_TASKS: &[&str] = &["text-simplification", "multilingual-event-entity"];

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("cannot read seeds {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSource {
    /// General-purpose pairs written by native speakers.
    AyaDataset,
    /// Templated task data.
    AyaCollection,
}

impl SeedSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeedSource::AyaDataset => "aya-dataset",
            SeedSource::AyaCollection => "aya-collection",
        }
    }
}

impl fmt::Display for SeedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SeedSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aya-dataset" => Ok(SeedSource::AyaDataset),
            "aya-collection" => Ok(SeedSource::AyaCollection),
            other => Err(format!("unknown seed source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub id: String,
    pub source: SeedSource,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub instruction: String,
    #[serde(default)]
    pub response: String,
}

impl SeedRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.instruction.trim().is_empty() {
            return Err("empty instruction".into());
        }
        if self.language.trim().is_empty() {
            return Err("empty language".into());
        }
        if self.source == SeedSource::AyaCollection && self.task.as_deref().is_none_or(|t| t.trim().is_empty()) {
            return Err("aya-collection record without task".into());
        }
        Ok(())
    }
}

/// Result of reading a seed file.
#[derive(Debug, Clone, Default)]
pub struct SeedIngest {
    pub records: Vec<SeedRecord>,
    pub rejections: Vec<LineRejection>,
}

/// A balanced sample plus the shortfall per bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub records: Vec<SeedRecord>,
    /// Bucket key -> requested minus available, only for short buckets.
    pub deficits: BTreeMap<String, usize>,
}

impl SeedSet {
    pub fn count(&self, source: SeedSource) -> usize {
        self.records.iter().filter(|r| r.source == source).count()
    }

    pub fn languages(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.language.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Parse one seed line in the native schema.
pub fn parse_seed_line(line: &str) -> Result<SeedRecord, String> {
    let rec: SeedRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.validate()?;
    Ok(rec)
}

pub fn read_seeds(path: impl AsRef<Path>) -> Result<SeedIngest, SeedError> {
    let path = path.as_ref();
    let io_err = |source| SeedError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let (records, rejections) =
        jsonl::parse_lines(BufReader::new(file), |line, _| parse_seed_line(line)).map_err(io_err)?;
    Ok(SeedIngest { records, rejections })
}

/// Drop records whose task is excluded, keeping relative order.
pub fn apply_exclusions(seeds: Vec<SeedRecord>, excluded_tasks: &BTreeSet<String>) -> Vec<SeedRecord> {
    seeds
        .into_iter()
        .filter(|s| s.task.as_ref().is_none_or(|t| !excluded_tasks.contains(t)))
        .collect()
}

pub fn default_exclusions() -> BTreeSet<String> {
    DEFAULT_EXCLUDED_TASKS.iter().map(|s| s.to_string()).collect()
}

/// Bucket key used in [`SeedSet::deficits`].
pub fn bucket_key(rec: &SeedRecord) -> String {
    match (rec.source, &rec.task) {
        (SeedSource::AyaCollection, Some(task)) => format!("{}:{}:{}", rec.source, task, rec.language),
        _ => format!("{}:{}", rec.source, rec.language),
    }
}

/// Draw `per_language` general seeds per language and
/// `per_task_per_language` task seeds per (task, language).
///
/// Buckets are visited in key order; each bucket is sorted by id, shuffled
/// with one SplitMix64 stream seeded from `rng_seed`, and a prefix taken.
/// Duplicate ids keep their first occurrence. Output is sorted by id.
/// Deficits cover only buckets present in the pool.
pub fn sample_balanced(
    seeds: &[SeedRecord],
    per_language: usize,
    per_task_per_language: usize,
    rng_seed: u64,
) -> SeedSet {
    let mut seen = HashSet::new();
    let mut buckets: BTreeMap<String, Vec<&SeedRecord>> = BTreeMap::new();
    for rec in seeds {
        if seen.insert(rec.id.as_str()) {
            buckets.entry(bucket_key(rec)).or_default().push(rec);
        }
    }

    let mut rng = SplitMix64::new(rng_seed);
    let mut records = Vec::new();
    let mut deficits = BTreeMap::new();
    for (key, mut bucket) in buckets {
        let quota = match bucket[0].source {
            SeedSource::AyaDataset => per_language,
            SeedSource::AyaCollection => per_task_per_language,
        };
        bucket.sort_by(|a, b| a.id.cmp(&b.id));
        rng.shuffle(&mut bucket);
        if bucket.len() < quota {
            deficits.insert(key, quota - bucket.len());
        }
        records.extend(bucket.into_iter().take(quota).cloned());
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    SeedSet { records, deficits }
}

/// Field names of a public Aya export, kept as data so new dumps only need
/// a new profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AyaProfile {
    pub source: SeedSource,
    pub instruction_field: String,
    pub response_field: String,
    pub language_field: String,
    #[serde(default)]
    pub id_field: Option<String>,
    #[serde(default)]
    pub task_field: Option<String>,
}

impl AyaProfile {
    /// `{inputs, targets, language_code}` rows of the general dataset.
    pub fn aya_dataset() -> Self {
        Self {
            source: SeedSource::AyaDataset,
            instruction_field: "inputs".into(),
            response_field: "targets".into(),
            language_field: "language_code".into(),
            id_field: None,
            task_field: None,
        }
    }

    /// `{id, inputs, targets, language, task_type}` rows of the collection.
    pub fn aya_collection() -> Self {
        Self {
            source: SeedSource::AyaCollection,
            instruction_field: "inputs".into(),
            response_field: "targets".into(),
            language_field: "language".into(),
            id_field: Some("id".into()),
            task_field: Some("task_type".into()),
        }
    }
}

/// Lowercase, hyphen-separated task key (`"Joke Explain"` -> `"joke-explain"`).
pub fn normalize_task(raw: &str) -> String {
    let mut out = String::new();
    for part in raw.split(|c: char| !c.is_alphanumeric()).filter(|p| !p.is_empty()) {
        if !out.is_empty() {
            out.push('-');
        }
        out.push_str(&part.to_lowercase());
    }
    out
}

/// Map one row of a public Aya dump onto [`SeedRecord`].
pub fn convert_aya_row(row: &Value, profile: &AyaProfile, line: usize) -> Result<SeedRecord, String> {
    let field = |name: &str| -> Option<String> {
        match row.get(name)? {
            Value::String(s) => Some(s.clone()),
            Value::Null => None,
            other => Some(other.to_string()),
        }
    };
    let require = |name: &str| field(name).ok_or_else(|| format!("missing field `{name}`"));
    let id = match &profile.id_field {
        Some(f) => require(f)?,
        None => format!("{}-{line}", profile.source),
    };
    let task = match &profile.task_field {
        Some(f) => Some(normalize_task(&require(f)?)),
        None => None,
    };
    let rec = SeedRecord {
        id,
        source: profile.source,
        language: require(&profile.language_field)?,
        task,
        instruction: require(&profile.instruction_field)?,
        response: field(&profile.response_field).unwrap_or_default(),
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn general(id: &str, lang: &str) -> SeedRecord {
        SeedRecord {
            id: id.into(),
            source: SeedSource::AyaDataset,
            language: lang.into(),
            task: None,
            instruction: format!("instruction {id}"),
            response: format!("response {id}"),
        }
    }

    fn task(id: &str, lang: &str, task: &str) -> SeedRecord {
        SeedRecord {
            source: SeedSource::AyaCollection,
            task: Some(task.into()),
            ..general(id, lang)
        }
    }

    fn write_tmp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn reads_well_formed_lines() {
        let f = write_tmp(&[
            r#"{"id":"a","source":"aya-dataset","language":"fr","instruction":"x","response":"y"}"#,
            r#"{"id":"b","source":"aya-dataset","language":"de","instruction":"x","response":"y"}"#,
            r#"{"id":"c","source":"aya-collection","language":"de","task":"soda","instruction":"x","response":"y"}"#,
        ]);
        let ingest = read_seeds(f.path()).unwrap();
        assert_eq!(ingest.records.len(), 3);
        assert!(ingest.rejections.is_empty());
    }

    #[test]
    fn missing_language_cites_line() {
        let f = write_tmp(&[
            r#"{"id":"a","source":"aya-dataset","language":"fr","instruction":"x","response":"y"}"#,
            r#"{"id":"b","source":"aya-dataset","instruction":"x","response":"y"}"#,
            r#"{"id":"c","source":"aya-dataset","language":"es","instruction":"x","response":"y"}"#,
        ]);
        let ingest = read_seeds(f.path()).unwrap();
        assert_eq!(ingest.records.len(), 2);
        assert_eq!(ingest.rejections.len(), 1);
        assert_eq!(ingest.rejections[0].line, 2);
        assert!(ingest.rejections[0].reason.contains("language"));
    }

    #[test]
    fn malformed_and_invalid_lines_rejected() {
        let f = write_tmp(&[
            "not json",
            r#"{"id":"b","source":"aya-collection","language":"fr","instruction":"x"}"#,
            r#"{"id":"c","source":"aya-dataset","language":"fr","instruction":"  "}"#,
        ]);
        let ingest = read_seeds(f.path()).unwrap();
        assert!(ingest.records.is_empty());
        let lines: Vec<_> = ingest.rejections.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![1, 2, 3]);
    }

    #[test]
    fn exclusions() {
        let seeds = vec![
            task("1", "fr", "soda"),
            task("2", "fr", "text-simplification"),
            general("3", "fr"),
            task("4", "de", "multilingual-event-entity"),
        ];
        let kept = apply_exclusions(seeds.clone(), &default_exclusions());
        let ids: Vec<_> = kept.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);
        assert_eq!(apply_exclusions(seeds.clone(), &BTreeSet::new()), seeds);
        let all: BTreeSet<String> = ["soda", "text-simplification", "multilingual-event-entity"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(apply_exclusions(seeds[..2].to_vec(), &all).is_empty());
    }

    #[test]
    fn shortfall_recorded_as_deficit() {
        let seeds = vec![general("a", "xx"), general("b", "xx")];
        let set = sample_balanced(&seeds, 100, 6, 1);
        assert_eq!(set.records.len(), 2);
        assert_eq!(set.deficits.get("aya-dataset:xx"), Some(&98));
    }

    #[test]
    fn quotas_per_bucket() {
        let mut seeds = Vec::new();
        for lang in ["fr", "de"] {
            for i in 0..10 {
                seeds.push(general(&format!("g-{lang}-{i}"), lang));
                seeds.push(task(&format!("t-{lang}-{i}"), lang, "soda"));
                seeds.push(task(&format!("u-{lang}-{i}"), lang, "pawsx"));
            }
        }
        let set = sample_balanced(&seeds, 4, 3, 9);
        assert_eq!(set.count(SeedSource::AyaDataset), 8);
        assert_eq!(set.count(SeedSource::AyaCollection), 12);
        assert!(set.deficits.is_empty());
        assert_eq!(set, sample_balanced(&seeds, 4, 3, 9));
        assert_ne!(set.records, sample_balanced(&seeds, 4, 3, 10).records);
    }

    #[test]
    fn duplicate_ids_selected_once() {
        let seeds = vec![general("a", "fr"), general("a", "fr"), general("b", "fr")];
        let set = sample_balanced(&seeds, 5, 0, 0);
        assert_eq!(set.records.len(), 2);
    }

    #[test]
    fn aya_rows_convert() {
        let row: Value = serde_json::json!({"inputs": "Q?", "targets": "A.", "language_code": "fra"});
        let rec = convert_aya_row(&row, &AyaProfile::aya_dataset(), 7).unwrap();
        assert_eq!(rec.id, "aya-dataset-7");
        assert_eq!(rec.language, "fra");

        let row: Value = serde_json::json!({"id": 5, "inputs": "Q?", "targets": "A.", "language": "de", "task_type": "Joke Explain"});
        let rec = convert_aya_row(&row, &AyaProfile::aya_collection(), 1).unwrap();
        assert_eq!(rec.id, "5");
        assert_eq!(rec.task.as_deref(), Some("joke-explain"));

        let row: Value = serde_json::json!({"targets": "A.", "language_code": "fra"});
        assert!(convert_aya_row(&row, &AyaProfile::aya_dataset(), 1)
            .unwrap_err()
            .contains("inputs"));
    }

    #[test]
    fn task_normalisation() {
        assert_eq!(normalize_task("Flan_CoT"), "flan-cot");
        assert_eq!(normalize_task(" Adversarial QA "), "adversarial-qa");
    }
}
