//! Final dataset: assembly across stages, token statistics and export.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dialogue::{Conversation, ConversationStatus, Turn};
use crate::evol::EvolRecord;
use crate::gateway::Role;
use crate::jsonl::{self, LineRejection};
use crate::seeds::{SeedRecord, SeedSource};

pub const M2LINGUAL_PROFILE_JSON: &str = include_str!("../data/m2lingual_profile.json");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("config fingerprint mismatch: inputs come from different runs ({expected} vs {found})")]
    FingerprintMismatch { expected: String, found: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("unknown export format `{0}` (expected flat-pairs or chat-turns)")]
    UnknownFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad stream profile: {0}")]
    Profile(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Seed,
    Evoled,
    MultiTurn,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Seed, Stage::Evoled, Stage::MultiTurn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Seed => "seed",
            Stage::Evoled => "evoled",
            Stage::MultiTurn => "multi-turn",
        }
    }
}

/// One exported item in chat-turns shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub stage: Stage,
    pub language: String,
    pub source: SeedSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub seed_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evol_id: Option<String>,
    pub turns: Vec<Turn>,
}

impl DatasetRecord {
    pub fn from_seed(s: &SeedRecord) -> Self {
        Self {
            id: format!("seed::{}", s.id),
            stage: Stage::Seed,
            language: s.language.clone(),
            source: s.source,
            task: s.task.clone(),
            seed_id: s.id.clone(),
            evol_id: None,
            turns: vec![
                Turn::user(s.instruction.clone(), None),
                Turn::assistant(s.response.clone()),
            ],
        }
    }

    pub fn from_evol(r: &EvolRecord) -> Self {
        Self {
            id: format!("evol::{}", r.id),
            stage: Stage::Evoled,
            language: r.language.clone(),
            source: r.source,
            task: r.task.clone(),
            seed_id: r.seed_id.clone(),
            evol_id: Some(r.evol_id.clone()),
            turns: vec![
                Turn::user(r.instruction.clone(), None),
                Turn::assistant(r.response.clone().unwrap_or_default()),
            ],
        }
    }

    pub fn from_conversation(c: &Conversation) -> Self {
        Self {
            id: c.id.clone(),
            stage: Stage::MultiTurn,
            language: c.language.clone(),
            source: c.source,
            task: c.task.clone(),
            seed_id: c.seed_id.clone(),
            evol_id: Some(c.evol_id.clone()),
            turns: c.turns.clone(),
        }
    }

    fn side(&self, role: Role) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(move |t| t.role == role)
            .map(|t| t.content.as_str())
    }
}

/// One stage's items plus the run fingerprint they were produced under.
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a, T> {
    pub fingerprint: &'a str,
    pub items: &'a [T],
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub stage_counts: BTreeMap<String, usize>,
    /// stage -> language -> count
    pub per_language_counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// stage -> task (or `generic`) -> count
    pub per_task_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub config_fingerprint: String,
    pub rng_seed: u64,
}

impl DatasetManifest {
    pub fn from_records(records: &[DatasetRecord], config_fingerprint: &str, rng_seed: u64) -> Self {
        let mut m = DatasetManifest {
            config_fingerprint: config_fingerprint.to_string(),
            rng_seed,
            ..Self::default()
        };
        for s in Stage::ALL {
            m.stage_counts.insert(s.as_str().to_string(), 0);
        }
        for r in records {
            let stage = r.stage.as_str().to_string();
            *m.stage_counts.get_mut(&stage).unwrap() += 1;
            *m.per_language_counts
                .entry(stage.clone())
                .or_default()
                .entry(r.language.clone())
                .or_default() += 1;
            let task = r.task.clone().unwrap_or_else(|| "generic".into());
            *m.per_task_counts.entry(stage).or_default().entry(task).or_default() += 1;
        }
        m
    }

    pub fn total(&self) -> usize {
        self.stage_counts.values().sum()
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "| Stage      | Records | Languages | Tasks |").unwrap();
        writeln!(out, "|------------|---------|-----------|-------|").unwrap();
        for s in Stage::ALL {
            let key = s.as_str();
            let langs = self.per_language_counts.get(key).map_or(0, BTreeMap::len);
            let tasks = self.per_task_counts.get(key).map_or(0, BTreeMap::len);
            writeln!(
                out,
                "| {key:<10} | {:>7} | {langs:>9} | {tasks:>5} |",
                self.stage_counts[key]
            )
            .unwrap();
        }
        writeln!(out, "| {:<10} | {:>7} |           |       |", "total", self.total()).unwrap();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assembled {
    pub manifest: DatasetManifest,
    pub records: Vec<DatasetRecord>,
}

/// Merge the three stages into one stream: seeds, complete evols, then
/// complete conversations, each sorted by id.
pub fn assemble(
    seeds: StageInput<'_, SeedRecord>,
    evols: StageInput<'_, EvolRecord>,
    conversations: StageInput<'_, Conversation>,
    rng_seed: u64,
) -> Result<Assembled, DatasetError> {
    let fingerprint = seeds.fingerprint;
    for other in [evols.fingerprint, conversations.fingerprint] {
        if other != fingerprint {
            return Err(DatasetError::FingerprintMismatch {
                expected: fingerprint.to_string(),
                found: other.to_string(),
            });
        }
    }

    let mut seed_recs: Vec<_> = seeds.items.iter().map(DatasetRecord::from_seed).collect();
    let mut evol_recs: Vec<_> = evols
        .items
        .iter()
        .filter(|r| r.is_complete())
        .map(DatasetRecord::from_evol)
        .collect();
    let mut conv_recs: Vec<_> = conversations
        .items
        .iter()
        .filter(|c| c.status == ConversationStatus::Complete && c.is_well_formed())
        .map(DatasetRecord::from_conversation)
        .collect();
    for part in [&mut seed_recs, &mut evol_recs, &mut conv_recs] {
        part.sort_by(|a, b| a.id.cmp(&b.id));
    }
    let records: Vec<DatasetRecord> = seed_recs.into_iter().chain(evol_recs).chain(conv_recs).collect();

    let mut ids = HashSet::new();
    for r in &records {
        if !ids.insert(r.id.as_str()) {
            return Err(DatasetError::DuplicateId(r.id.clone()));
        }
    }
    let manifest = DatasetManifest::from_records(&records, fingerprint, rng_seed);
    Ok(Assembled { manifest, records })
}

pub trait Tokenizer: Sync {
    fn id(&self) -> String;
    fn count(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn id(&self) -> String {
        "whitespace".into()
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct StageSums {
    count: usize,
    instruction_tokens: usize,
    instruction_texts: usize,
    response_tokens: usize,
    response_texts: usize,
}

/// Mergeable per-stage token sums. Multi-turn items count all user turns as
/// the instruction side and all assistant turns as the response side.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StatsAccumulator {
    sums: BTreeMap<Stage, StageSums>,
    rejections: Vec<LineRejection>,
}

impl StatsAccumulator {
    pub fn add(&mut self, record: &DatasetRecord, tokenizer: &dyn Tokenizer) {
        let s = self.sums.entry(record.stage).or_default();
        s.count += 1;
        let inst: usize = record.side(Role::User).map(|t| tokenizer.count(t)).sum();
        let resp: usize = record.side(Role::Assistant).map(|t| tokenizer.count(t)).sum();
        if inst > 0 {
            s.instruction_tokens += inst;
            s.instruction_texts += 1;
        }
        if resp > 0 {
            s.response_tokens += resp;
            s.response_texts += 1;
        }
    }

    pub fn reject(&mut self, rejection: LineRejection) {
        self.rejections.push(rejection);
    }

    pub fn merge(mut self, other: StatsAccumulator) -> StatsAccumulator {
        for (stage, o) in other.sums {
            let s = self.sums.entry(stage).or_default();
            s.count += o.count;
            s.instruction_tokens += o.instruction_tokens;
            s.instruction_texts += o.instruction_texts;
            s.response_tokens += o.response_tokens;
            s.response_texts += o.response_texts;
        }
        self.rejections.extend(other.rejections);
        self
    }

    pub fn finish(mut self, tokenizer: &dyn Tokenizer) -> StatsReport {
        let avg = |sum: usize, n: usize| if n == 0 { 0.0 } else { sum as f64 / n as f64 };
        let stages = Stage::ALL
            .iter()
            .map(|stage| {
                let s = self.sums.get(stage).copied().unwrap_or_default();
                (
                    stage.as_str().to_string(),
                    StageStats {
                        count: s.count,
                        avg_instruction_tokens: avg(s.instruction_tokens, s.instruction_texts),
                        avg_response_tokens: avg(s.response_tokens, s.response_texts),
                    },
                )
            })
            .collect();
        self.rejections.sort_by_key(|r| r.line);
        StatsReport {
            tokenizer: tokenizer.id(),
            stages,
            rejections: self.rejections,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub count: usize,
    pub avg_instruction_tokens: f64,
    pub avg_response_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub tokenizer: String,
    pub stages: BTreeMap<String, StageStats>,
    pub rejections: Vec<LineRejection>,
}

impl StatsReport {
    pub fn stage(&self, stage: Stage) -> StageStats {
        self.stages[stage.as_str()]
    }

    pub fn total(&self) -> usize {
        self.stages.values().map(|s| s.count).sum()
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "| Stage      | Records | Avg instruction | Avg response |").unwrap();
        writeln!(out, "|------------|---------|-----------------|--------------|").unwrap();
        for s in Stage::ALL {
            let st = self.stage(s);
            writeln!(
                out,
                "| {:<10} | {:>7} | {:>15.2} | {:>12.2} |",
                s.as_str(),
                st.count,
                st.avg_instruction_tokens,
                st.avg_response_tokens
            )
            .unwrap();
        }
        writeln!(
            out,
            "| {:<10} | {:>7} |                 |              |",
            "total",
            self.total()
        )
        .unwrap();
        writeln!(
            out,
            "tokenizer: {}; rejected lines: {}",
            self.tokenizer,
            self.rejections.len()
        )
        .unwrap();
        out
    }
}

pub fn compute_stats(records: &[DatasetRecord], tokenizer: &dyn Tokenizer) -> StatsReport {
    let mut acc = StatsAccumulator::default();
    for r in records {
        acc.add(r, tokenizer);
    }
    acc.finish(tokenizer)
}

/// How to read a foreign dataset dump as [`DatasetRecord`]s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamProfile {
    pub name: String,
    #[serde(default)]
    pub id_field: Option<String>,
    pub stage_field: String,
    /// Raw stage value (compared lowercase, alphanumerics only) to stage.
    pub stage_values: BTreeMap<String, Stage>,
    pub language_field: String,
    #[serde(default)]
    pub task_field: Option<String>,
    #[serde(default)]
    pub turns_field: Option<String>,
    pub role_field: String,
    pub content_field: String,
    pub user_roles: Vec<String>,
    pub assistant_roles: Vec<String>,
    /// Flat fallback used when the turns field is missing or empty.
    #[serde(default)]
    pub instruction_field: Option<String>,
    #[serde(default)]
    pub response_field: Option<String>,
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl StreamProfile {
    pub fn m2lingual() -> Self {
        serde_json::from_str(M2LINGUAL_PROFILE_JSON).expect("shipped profile parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Profile(e.to_string()))
    }

    pub fn map_row(&self, row: &Value, line: usize) -> Result<DatasetRecord, String> {
        let text = |field: &str| -> Option<String> {
            match row.get(field)? {
                Value::String(s) => Some(s.clone()),
                Value::Null => None,
                other => Some(other.to_string()),
            }
        };
        let raw_stage = text(&self.stage_field).ok_or_else(|| format!("missing field `{}`", self.stage_field))?;
        let stage = self
            .stage_values
            .iter()
            .find(|(k, _)| squash(k) == squash(&raw_stage))
            .map(|(_, s)| *s)
            .ok_or_else(|| format!("unknown stage value `{raw_stage}`"))?;
        let language = text(&self.language_field).ok_or_else(|| format!("missing field `{}`", self.language_field))?;
        let task = self.task_field.as_deref().and_then(text).filter(|t| !t.is_empty());
        let id = self
            .id_field
            .as_deref()
            .and_then(text)
            .unwrap_or_else(|| format!("line-{line}"));

        let mut turns = Vec::new();
        if let Some(arr) = self
            .turns_field
            .as_deref()
            .and_then(|f| row.get(f))
            .and_then(Value::as_array)
        {
            for t in arr {
                let role = t.get(&self.role_field).and_then(Value::as_str).unwrap_or_default();
                let content = t.get(&self.content_field).and_then(Value::as_str).unwrap_or_default();
                let role = if self.user_roles.iter().any(|r| r.eq_ignore_ascii_case(role)) {
                    Role::User
                } else if self.assistant_roles.iter().any(|r| r.eq_ignore_ascii_case(role)) {
                    Role::Assistant
                } else {
                    return Err(format!("unknown role `{role}`"));
                };
                turns.push(Turn {
                    role,
                    content: content.to_string(),
                    follow_up_type: None,
                });
            }
        }
        if turns.is_empty() {
            let inst = self.instruction_field.as_deref().and_then(text);
            let resp = self.response_field.as_deref().and_then(text);
            match inst {
                Some(i) => {
                    turns.push(Turn::user(i, None));
                    turns.push(Turn::assistant(resp.unwrap_or_default()));
                }
                None => return Err("no turns and no instruction field".into()),
            }
        }
        Ok(DatasetRecord {
            seed_id: id.clone(),
            id,
            stage,
            language,
            source: if task.is_some() {
                SeedSource::AyaCollection
            } else {
                SeedSource::AyaDataset
            },
            task,
            evol_id: None,
            turns,
        })
    }
}

/// Stats over a line-delimited file. Lines are read as native records, or
/// through `profile` when given.
pub fn compute_stats_file(
    path: impl AsRef<Path>,
    tokenizer: &dyn Tokenizer,
    profile: Option<&StreamProfile>,
) -> Result<StatsReport, DatasetError> {
    compute_stats_files(&[path.as_ref()], tokenizer, profile)
}

/// Stats over several files read as one stream. Rejected line numbers are
/// per file.
pub fn compute_stats_files<P: AsRef<Path>>(
    paths: &[P],
    tokenizer: &dyn Tokenizer,
    profile: Option<&StreamProfile>,
) -> Result<StatsReport, DatasetError> {
    let mut acc = StatsAccumulator::default();
    for path in paths {
        accumulate_file(path.as_ref(), tokenizer, profile, &mut acc)?;
    }
    Ok(acc.finish(tokenizer))
}

fn accumulate_file(
    path: &Path,
    tokenizer: &dyn Tokenizer,
    profile: Option<&StreamProfile>,
    acc: &mut StatsAccumulator,
) -> Result<(), DatasetError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match profile {
            None => serde_json::from_str::<DatasetRecord>(&line).map_err(|e| e.to_string()),
            Some(p) => serde_json::from_str::<Value>(&line)
                .map_err(|e| e.to_string())
                .and_then(|v| p.map_row(&v, idx + 1)),
        };
        match parsed {
            Ok(rec) => acc.add(&rec, tokenizer),
            Err(reason) => acc.reject(LineRejection { line: idx + 1, reason }),
        }
    }
    Ok(())
}

/// The file itself, or every `.jsonl`/`.json` file directly inside a
/// directory, sorted.
pub fn expand_inputs(path: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>, DatasetError> {
    let path = path.as_ref();
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("jsonl" | "json")))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    FlatPairs,
    ChatTurns,
}

impl std::str::FromStr for ExportFormat {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat-pairs" => Ok(ExportFormat::FlatPairs),
            "chat-turns" => Ok(ExportFormat::ChatTurns),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

/// Single instruction/response row. For conversations, the final exchange
/// with the earlier turns in `history`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatPair {
    pub id: String,
    pub stage: Stage,
    pub language: String,
    pub source: SeedSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub seed_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evol_id: Option<String>,
    pub instruction: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<Turn>,
}

impl From<&DatasetRecord> for FlatPair {
    fn from(r: &DatasetRecord) -> Self {
        let last_user = r.turns.iter().rposition(|t| t.role == Role::User);
        let (history, instruction, response) = match last_user {
            Some(i) => (
                r.turns[..i].to_vec(),
                r.turns[i].content.clone(),
                r.turns.get(i + 1).map(|t| t.content.clone()).unwrap_or_default(),
            ),
            None => (Vec::new(), String::new(), String::new()),
        };
        FlatPair {
            id: r.id.clone(),
            stage: r.stage,
            language: r.language.clone(),
            source: r.source,
            task: r.task.clone(),
            seed_id: r.seed_id.clone(),
            evol_id: r.evol_id.clone(),
            instruction,
            response,
            history,
        }
    }
}

/// Write one JSON object per record. Returns the number of lines written.
pub fn export(records: &[DatasetRecord], path: impl AsRef<Path>, format: ExportFormat) -> Result<usize, DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        match format {
            ExportFormat::ChatTurns => write_line(&mut out, r),
            ExportFormat::FlatPairs => write_line(&mut out, &FlatPair::from(r)),
        }
        .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    Ok(records.len())
}

fn write_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

/// Read a chat-turns file back.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(Vec<DatasetRecord>, Vec<LineRejection>), DatasetError> {
    let path = path.as_ref();
    jsonl::read_typed(path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, stage: Stage, inst: &str, resp: &str) -> DatasetRecord {
        DatasetRecord {
            id: id.into(),
            stage,
            language: "fr".into(),
            source: SeedSource::AyaDataset,
            task: None,
            seed_id: id.into(),
            evol_id: None,
            turns: vec![Turn::user(inst, None), Turn::assistant(resp)],
        }
    }

    #[test]
    fn average_of_three_and_five() {
        let recs = vec![
            rec("a", Stage::Seed, "one two three", "x"),
            rec("b", Stage::Seed, "one two three four five", "y"),
        ];
        let s = compute_stats(&recs, &WhitespaceTokenizer);
        assert_eq!(s.stage(Stage::Seed).count, 2);
        assert_eq!(s.stage(Stage::Seed).avg_instruction_tokens, 4.0);
        assert_eq!(s.stage(Stage::Evoled).count, 0);
    }

    #[test]
    fn multi_turn_sums_sides() {
        let mut r = rec("c", Stage::MultiTurn, "a b", "c");
        r.turns.push(Turn::user("d e f", Some("challenging".into())));
        r.turns.push(Turn::assistant("g h"));
        let s = compute_stats(&[r], &WhitespaceTokenizer);
        assert_eq!(s.stage(Stage::MultiTurn).avg_instruction_tokens, 5.0);
        assert_eq!(s.stage(Stage::MultiTurn).avg_response_tokens, 3.0);
    }

    #[test]
    fn empty_texts_excluded_from_averages() {
        let recs = vec![
            rec("a", Stage::Seed, "one two", ""),
            rec("b", Stage::Seed, "one two", "r s t u"),
        ];
        let s = compute_stats(&recs, &WhitespaceTokenizer);
        assert_eq!(s.stage(Stage::Seed).avg_response_tokens, 4.0);
    }

    #[test]
    fn accumulators_merge() {
        let recs: Vec<_> = (0..10)
            .map(|i| rec(&i.to_string(), Stage::Evoled, &"w ".repeat(i + 1), "r"))
            .collect();
        let whole = compute_stats(&recs, &WhitespaceTokenizer);
        let mut a = StatsAccumulator::default();
        let mut b = StatsAccumulator::default();
        for r in &recs[..4] {
            a.add(r, &WhitespaceTokenizer);
        }
        for r in &recs[4..] {
            b.add(r, &WhitespaceTokenizer);
        }
        assert_eq!(a.merge(b).finish(&WhitespaceTokenizer), whole);
    }

    #[test]
    fn unknown_format() {
        assert!(matches!(
            "csv".parse::<ExportFormat>(),
            Err(DatasetError::UnknownFormat(_))
        ));
        assert_eq!("chat-turns".parse::<ExportFormat>().unwrap(), ExportFormat::ChatTurns);
    }

    #[test]
    fn flat_pair_of_conversation() {
        let mut r = rec("c", Stage::MultiTurn, "q1", "a1");
        r.turns.push(Turn::user("q2", Some("pronouns".into())));
        r.turns.push(Turn::assistant("a2"));
        let f = FlatPair::from(&r);
        assert_eq!((f.instruction.as_str(), f.response.as_str()), ("q2", "a2"));
        assert_eq!(f.history.len(), 2);
        let single = FlatPair::from(&rec("s", Stage::Seed, "q", "a"));
        assert!(single.history.is_empty());
    }

    #[test]
    fn profile_maps_rows() {
        let p = StreamProfile::m2lingual();
        let row = serde_json::json!({
            "id": 7, "type": "Multi-Turn", "language": "fr", "task": "soda",
            "conversation": [{"role": "user", "content": "a b"}, {"role": "assistant", "content": "c"}]
        });
        let r = p.map_row(&row, 1).unwrap();
        assert_eq!(r.stage, Stage::MultiTurn);
        assert_eq!(r.id, "7");
        assert_eq!(r.source, SeedSource::AyaCollection);
        let flat = serde_json::json!({"type": "seed", "language": "de", "seed_prompt": "q", "seed_response": "a"});
        let r = p.map_row(&flat, 3).unwrap();
        assert_eq!(r.id, "line-3");
        assert_eq!(r.turns.len(), 2);
        assert!(p
            .map_row(&serde_json::json!({"type": "other", "language": "x"}), 1)
            .is_err());
    }
}
