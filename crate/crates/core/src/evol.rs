//! Instruction evolution: every seed times every applicable condition, then
//! a response for each evolved instruction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::gateway::{CompletionRequest, CompletionStatus, Gateway, GatewayError, Message};
use crate::par;
use crate::prompt::{self, LanguageTable};
use crate::rng::SplitMix64;
use crate::seeds::{SeedRecord, SeedSet, SeedSource};
use crate::taxonomy::{EvolCondition, TaxonomyRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolStatus {
    InstructionOk,
    Complete,
    FailedGeneration,
    FailedResponse,
    Filtered,
}

impl EvolStatus {
    pub const ALL: [EvolStatus; 5] = [
        EvolStatus::InstructionOk,
        EvolStatus::Complete,
        EvolStatus::FailedGeneration,
        EvolStatus::FailedResponse,
        EvolStatus::Filtered,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EvolStatus::InstructionOk => "instruction-ok",
            EvolStatus::Complete => "complete",
            EvolStatus::FailedGeneration => "failed-generation",
            EvolStatus::FailedResponse => "failed-response",
            EvolStatus::Filtered => "filtered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub instruction_temperature: f64,
    pub instruction_attempts: u32,
    pub instruction_status: Option<CompletionStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_status: Option<CompletionStatus>,
    /// Why the record failed or was filtered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolRecord {
    /// `{seed_id}::{evol_id}`.
    pub id: String,
    pub seed_id: String,
    pub evol_id: String,
    pub source: SeedSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_2: Option<String>,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub status: EvolStatus,
    pub provenance: Provenance,
    /// Placeholder values used to render the evol prompt.
    pub placeholders: BTreeMap<String, String>,
}

impl EvolRecord {
    pub fn make_id(seed_id: &str, evol_id: &str) -> String {
        format!("{seed_id}::{evol_id}")
    }

    pub fn is_complete(&self) -> bool {
        self.status == EvolStatus::Complete
    }
}

/// Counts over a set of evol records, plus seeds that had no conditions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub attempted: usize,
    pub status_counts: BTreeMap<String, usize>,
    /// language -> status -> count
    pub language_counts: BTreeMap<String, BTreeMap<String, usize>>,
    /// task (or `generic`) -> status -> count
    pub task_counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub unsupported_seeds: Vec<String>,
}

impl RunManifest {
    pub fn from_records(records: &[EvolRecord]) -> Self {
        let mut m = RunManifest {
            attempted: records.len(),
            ..Self::default()
        };
        for s in EvolStatus::ALL {
            m.status_counts.insert(s.as_str().to_string(), 0);
        }
        for r in records {
            let s = r.status.as_str().to_string();
            *m.status_counts.get_mut(&s).unwrap() += 1;
            *m.language_counts
                .entry(r.language.clone())
                .or_default()
                .entry(s.clone())
                .or_default() += 1;
            let task = r.task.clone().unwrap_or_else(|| "generic".into());
            *m.task_counts.entry(task).or_default().entry(s).or_default() += 1;
        }
        m
    }

    pub fn count(&self, status: EvolStatus) -> usize {
        self.status_counts.get(status.as_str()).copied().unwrap_or(0)
    }

    /// attempted = sum over all statuses.
    pub fn is_conserved(&self) -> bool {
        self.attempted == EvolStatus::ALL.iter().map(|s| self.count(*s)).sum::<usize>()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolRun {
    pub records: Vec<EvolRecord>,
    pub manifest: RunManifest,
}

pub fn evol_tag(id: &str) -> String {
    format!("evol:{id}")
}

pub fn response_tag(id: &str) -> String {
    format!("response:{id}")
}

struct Job<'a> {
    seed: &'a SeedRecord,
    cond: &'a EvolCondition,
}

/// Render and send one evol prompt per (seed, condition). Output is sorted
/// by record id.
pub fn run_instruction_evol(
    seeds: &SeedSet,
    registry: &TaxonomyRegistry,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<EvolRun, GatewayError> {
    let table = LanguageTable::default();
    let pool = if cfg.languages.pool.is_empty() {
        seeds.languages()
    } else {
        cfg.languages.pool.clone()
    };
    let translit = cfg.transliteration_pool(&table);

    let mut jobs = Vec::new();
    let mut unsupported = Vec::new();
    for seed in &seeds.records {
        match registry.conditions_for(seed) {
            Ok(conds) => jobs.extend(conds.into_iter().map(|cond| Job { seed, cond })),
            Err(e) => {
                log::warn!("seed {} skipped: {e}", seed.id);
                unsupported.push(seed.id.clone());
            }
        }
    }

    let results = par::map(&jobs, gateway.concurrency(), |job| {
        evolve_one(job, &pool, &translit, &table, gateway, cfg)
    });
    let mut records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut manifest = RunManifest::from_records(&records);
    manifest.unsupported_seeds = unsupported;
    Ok(EvolRun { records, manifest })
}

fn evolve_one(
    job: &Job<'_>,
    pool: &[String],
    translit: &[String],
    table: &LanguageTable,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<EvolRecord, GatewayError> {
    let id = EvolRecord::make_id(&job.seed.id, &job.cond.id);
    let params = &cfg.generation;
    let mut record = EvolRecord {
        id: id.clone(),
        seed_id: job.seed.id.clone(),
        evol_id: job.cond.id.clone(),
        source: job.seed.source,
        task: job.seed.task.clone(),
        language: job.seed.language.clone(),
        language_2: None,
        instruction: String::new(),
        response: None,
        status: EvolStatus::FailedGeneration,
        provenance: Provenance {
            model: params.model.clone(),
            instruction_temperature: params.instruction_temperature,
            instruction_attempts: 0,
            instruction_status: None,
            response_temperature: None,
            response_attempts: None,
            response_status: None,
            note: None,
        },
        placeholders: BTreeMap::new(),
    };

    let mut rng = SplitMix64::derive(cfg.rng_seed, &id);
    let rendered = prompt::assign_languages(job.seed, job.cond, pool, translit, &mut rng).and_then(|langs| {
        record.language_2 = langs.language_2.clone();
        prompt::render_evol_prompt(job.cond, job.seed, &langs, table)
    });
    let rendered = match rendered {
        Ok(p) => p,
        Err(e) => {
            record.provenance.note = Some(e.to_string());
            return Ok(record);
        }
    };
    record.placeholders = rendered.resolved_placeholders;

    let request = CompletionRequest::new(
        vec![Message::user(rendered.text)],
        params,
        params.instruction_temperature,
        evol_tag(&id),
    );
    let result = gateway.complete(&request, &cfg.retry)?;
    record.provenance.instruction_attempts = result.attempts;
    record.provenance.instruction_status = Some(result.status);
    if !result.is_ok() {
        record.provenance.note = result.error.or_else(|| Some(format!("{:?}", result.status)));
        return Ok(record);
    }
    let instruction = prompt::clean_evolved_instruction(&result.content);
    if instruction.is_empty() {
        record.provenance.note = Some("empty instruction after cleanup".into());
        return Ok(record);
    }
    record.instruction = instruction;
    record.status = EvolStatus::InstructionOk;
    Ok(record)
}

/// Answer every `instruction-ok` record from its instruction alone. Other
/// records pass through untouched.
pub fn generate_responses(
    records: Vec<EvolRecord>,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<Vec<EvolRecord>, GatewayError> {
    let params = &cfg.generation;
    let out = par::map(&records, gateway.concurrency(), |rec| {
        let mut rec = rec.clone();
        if rec.status != EvolStatus::InstructionOk {
            return Ok(rec);
        }
        let request = CompletionRequest::new(
            vec![Message::user(rec.instruction.clone())],
            params,
            params.response_temperature,
            response_tag(&rec.id),
        );
        let result = gateway.complete(&request, &cfg.retry)?;
        rec.provenance.response_temperature = Some(params.response_temperature);
        rec.provenance.response_attempts = Some(result.attempts);
        rec.provenance.response_status = Some(result.status);
        if result.is_ok() {
            rec.response = Some(result.content.trim().to_string());
            rec.status = EvolStatus::Complete;
        } else {
            rec.status = EvolStatus::FailedResponse;
            rec.provenance.note = result.error.or_else(|| Some(format!("{:?}", result.status)));
        }
        Ok(rec)
    });
    out.into_iter().collect()
}
