//! End-to-end run: sample, evolve, answer, filter, converse, moderate,
//! assemble.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::dataset::{self, Assembled, DatasetError, StageInput};
use crate::dialogue::{self, Conversation, ConversationStatus};
use crate::evol::{self, EvolRecord, EvolStatus, RunManifest};
use crate::filter::{self, FilterPolicy, ModerationClient, ModerationReport};
use crate::gateway::{Gateway, GatewayError};
use crate::seeds::{self, SeedRecord, SeedSet};
use crate::taxonomy::TaxonomyRegistry;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Mark complete records that fail screening as `filtered`. Returns drop
/// counts by reason.
pub fn filter_evols(records: &mut [EvolRecord], policy: &FilterPolicy) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for rec in records.iter_mut().filter(|r| r.is_complete()) {
        let reasons = filter::screen(rec, policy);
        if reasons.is_empty() {
            continue;
        }
        for r in &reasons {
            let key = serde_json::to_value(r).unwrap()["reason"].as_str().unwrap().to_string();
            *counts.entry(key).or_insert(0) += 1;
        }
        rec.status = EvolStatus::Filtered;
        rec.provenance.note = Some(serde_json::to_string(&reasons).unwrap());
    }
    counts
}

/// Conversation counts through each post-processing step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationSummary {
    pub attempted: usize,
    pub complete: usize,
    pub truncated: usize,
    pub filtered: usize,
    pub dropped_by_moderation: usize,
    pub exported: usize,
    pub filter_reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub fingerprint: String,
    pub seedset: SeedSet,
    /// Every attempted evol record, whatever its status.
    pub evols: Vec<EvolRecord>,
    pub evol_manifest: RunManifest,
    pub evol_filter_reasons: BTreeMap<String, usize>,
    /// Every conversation grown, including truncated and filtered ones.
    pub conversations: Vec<Conversation>,
    pub conversation_summary: ConversationSummary,
    pub moderation: Option<ModerationReport>,
    pub dataset: Assembled,
}

impl PipelineOutput {
    /// Conversations that made it into the dataset.
    pub fn exported_conversations(&self) -> impl Iterator<Item = &Conversation> {
        let ids: BTreeSet<&str> = self
            .dataset
            .records
            .iter()
            .filter(|r| r.stage == dataset::Stage::MultiTurn)
            .map(|r| r.id.as_str())
            .collect();
        self.conversations.iter().filter(move |c| ids.contains(c.id.as_str()))
    }
}

pub fn run_pipeline(
    seeds: Vec<SeedRecord>,
    registry: &TaxonomyRegistry,
    gateway: &Gateway,
    cfg: &PipelineConfig,
    moderation: Option<&dyn ModerationClient>,
) -> Result<PipelineOutput, PipelineError> {
    let fingerprint = cfg.fingerprint(registry);
    let excluded: BTreeSet<String> = cfg.sampling.excluded_tasks.iter().cloned().collect();
    let seedset = seeds::sample_balanced(
        &seeds::apply_exclusions(seeds, &excluded),
        cfg.sampling.per_language,
        cfg.sampling.per_task_per_language,
        cfg.rng_seed,
    );
    log::info!("sampled {} seeds", seedset.records.len());

    let run = evol::run_instruction_evol(&seedset, registry, gateway, cfg)?;
    let mut evols = evol::generate_responses(run.records, gateway, cfg)?;
    let evol_filter_reasons = filter_evols(&mut evols, &cfg.filter);
    let mut evol_manifest = RunManifest::from_records(&evols);
    evol_manifest.unsupported_seeds = run.manifest.unsupported_seeds;
    log::info!("evolved {} records", evols.len());

    let conv_run = dialogue::build_conversations(&evols, registry, gateway, cfg)?;
    let mut summary = ConversationSummary {
        attempted: conv_run.attempted,
        complete: conv_run.complete,
        truncated: conv_run.truncated,
        ..Default::default()
    };
    let complete: Vec<Conversation> = conv_run
        .conversations
        .iter()
        .filter(|c| c.status == ConversationStatus::Complete)
        .cloned()
        .collect();
    let screened = filter::filter_records(complete, &cfg.filter);
    summary.filtered = screened.dropped.len();
    summary.filter_reasons = screened.reason_counts();
    let mut kept = screened.kept;

    let report = moderation.map(|client| filter::moderate(&kept, client));
    if let Some(r) = &report {
        let before = kept.len();
        kept = filter::strip_flagged(kept, r);
        summary.dropped_by_moderation = before - kept.len();
    }

    let dataset = dataset::assemble(
        StageInput {
            fingerprint: &fingerprint,
            items: &seedset.records,
        },
        StageInput {
            fingerprint: &fingerprint,
            items: &evols,
        },
        StageInput {
            fingerprint: &fingerprint,
            items: &kept,
        },
        cfg.rng_seed,
    )?;
    summary.exported = dataset.manifest.stage_counts["multi-turn"];

    // Keep stripped versions in the conversation list so it matches the export.
    let stripped: BTreeMap<&str, &Conversation> = kept.iter().map(|c| (c.id.as_str(), c)).collect();
    let conversations = conv_run
        .conversations
        .iter()
        .map(|c| stripped.get(c.id.as_str()).map_or_else(|| c.clone(), |k| (*k).clone()))
        .collect();

    Ok(PipelineOutput {
        fingerprint,
        seedset,
        evols,
        evol_manifest,
        evol_filter_reasons,
        conversations,
        conversation_summary: summary,
        moderation: report,
        dataset,
    })
}
