//! Growing multi-turn conversations from completed evol records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::evol::EvolRecord;
use crate::gateway::{parse_followup_json, CompletionRequest, Gateway, GatewayError, Message, Role};
use crate::par;
use crate::prompt::{self, LanguageTable};
use crate::rng::SplitMix64;
use crate::seeds::SeedSource;
use crate::taxonomy::{DialogueVariation, TaxonomyRegistry};

/// Hard cap on user turns per conversation.
pub const MAX_USER_TURNS: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DialogueError {
    #[error("record `{0}` is not complete")]
    NotComplete(String),
    #[error("max_followups must be 1..=3, got {0}")]
    BadMaxFollowups(usize),
    #[error("need {needed} dialogue variations, registry has {available}")]
    TooFewVariations { needed: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    /// Variation id, set only on generated user turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow_up_type: Option<String>,
}

impl Turn {
    pub fn user(content: impl Into<String>, follow_up_type: Option<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            follow_up_type,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            follow_up_type: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationPlan {
    pub record_id: String,
    pub depth: usize,
    pub variations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConversationStatus {
    Complete,
    TruncatedFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    /// `conv::{record_id}`.
    pub id: String,
    pub root: String,
    pub seed_id: String,
    pub evol_id: String,
    pub source: SeedSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub language: String,
    pub turns: Vec<Turn>,
    pub status: ConversationStatus,
    pub planned_depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl Conversation {
    pub fn make_id(record_id: &str) -> String {
        format!("conv::{record_id}")
    }

    pub fn user_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.role == Role::User).count()
    }

    /// Alternating roles from a user turn, ending on an assistant turn,
    /// tags only on later user turns, at most four user turns.
    pub fn is_well_formed(&self) -> bool {
        if self.turns.is_empty() || !self.turns.len().is_multiple_of(2) || self.user_turns() > MAX_USER_TURNS {
            return false;
        }
        self.turns.iter().enumerate().all(|(i, t)| {
            let role_ok = t.role == if i % 2 == 0 { Role::User } else { Role::Assistant };
            let tag_ok = (t.role == Role::User && i > 0) == t.follow_up_type.is_some();
            role_ok && tag_ok
        })
    }
}

/// Draw a depth in `1..=max_followups` and that many distinct variations.
pub fn plan_conversation(
    record: &EvolRecord,
    variations: &[DialogueVariation],
    rng: &mut SplitMix64,
    max_followups: usize,
) -> Result<ConversationPlan, DialogueError> {
    if !record.is_complete() {
        return Err(DialogueError::NotComplete(record.id.clone()));
    }
    if !(1..MAX_USER_TURNS).contains(&max_followups) {
        return Err(DialogueError::BadMaxFollowups(max_followups));
    }
    let depth = 1 + rng.below(max_followups);
    if variations.len() < depth {
        return Err(DialogueError::TooFewVariations {
            needed: depth,
            available: variations.len(),
        });
    }
    let picked = rng
        .sample_indices(variations.len(), depth)
        .into_iter()
        .map(|i| variations[i].id.clone())
        .collect();
    Ok(ConversationPlan {
        record_id: record.id.clone(),
        depth,
        variations: picked,
    })
}

pub fn followup_tag(conv_id: &str, k: usize) -> String {
    format!("followup:{conv_id}:{k}")
}

pub fn reply_tag(conv_id: &str, k: usize) -> String {
    format!("reply:{conv_id}:{k}")
}

/// Grow a conversation along `plan`. A failed call or unparsable follow-up
/// stops growth; a user turn without its answer is dropped.
pub fn extend_conversation(
    plan: &ConversationPlan,
    record: &EvolRecord,
    registry: &TaxonomyRegistry,
    gateway: &Gateway,
    cfg: &PipelineConfig,
    rng: &mut SplitMix64,
) -> Result<Conversation, GatewayError> {
    let table = LanguageTable::default();
    let params = &cfg.generation;
    let id = Conversation::make_id(&record.id);
    let mut conv = Conversation {
        id: id.clone(),
        root: record.id.clone(),
        seed_id: record.seed_id.clone(),
        evol_id: record.evol_id.clone(),
        source: record.source,
        task: record.task.clone(),
        language: record.language.clone(),
        turns: vec![
            Turn::user(record.instruction.clone(), None),
            Turn::assistant(record.response.clone().unwrap_or_default()),
        ],
        status: ConversationStatus::Complete,
        planned_depth: plan.depth,
        failure: None,
    };

    for (k, var_id) in plan.variations.iter().enumerate() {
        let k = k + 1;
        let failure = match registry.variation(var_id) {
            None => Some(format!("unknown variation `{var_id}`")),
            Some(variation) => grow_once(&mut conv, k, variation, record, &table, gateway, cfg, params, rng)?,
        };
        if let Some(reason) = failure {
            if conv.turns.last().is_some_and(|t| t.role == Role::User) {
                conv.turns.pop();
            }
            conv.status = ConversationStatus::TruncatedFailure;
            conv.failure = Some(format!("turn {k}: {reason}"));
            break;
        }
    }
    Ok(conv)
}

#[allow(clippy::too_many_arguments)]
fn grow_once(
    conv: &mut Conversation,
    k: usize,
    variation: &DialogueVariation,
    record: &EvolRecord,
    table: &LanguageTable,
    gateway: &Gateway,
    cfg: &PipelineConfig,
    params: &crate::gateway::GenerationParams,
    rng: &mut SplitMix64,
) -> Result<Option<String>, GatewayError> {
    let text = match prompt::render_followup_prompt(&record.instruction, variation, &record.language, table, rng) {
        Ok(p) => p.text,
        Err(e) => return Ok(Some(e.to_string())),
    };
    let ask = CompletionRequest::new(
        vec![Message::user(text)],
        params,
        params.instruction_temperature,
        followup_tag(&conv.id, k),
    );
    let result = gateway.complete(&ask, &cfg.retry)?;
    if !result.is_ok() {
        return Ok(Some(format!("follow-up {:?}", result.status)));
    }
    let follow_up = match parse_followup_json(&result.content) {
        Ok(f) => f,
        Err(e) => return Ok(Some(e.to_string())),
    };
    conv.turns.push(Turn::user(follow_up.text, Some(variation.id.clone())));

    let history = match prompt::render_response_request(&conv.turns) {
        Ok(h) => h,
        Err(e) => return Ok(Some(e.to_string())),
    };
    let reply = CompletionRequest::new(history, params, params.response_temperature, reply_tag(&conv.id, k));
    let result = gateway.complete(&reply, &cfg.retry)?;
    if !result.is_ok() {
        return Ok(Some(format!("reply {:?}", result.status)));
    }
    conv.turns.push(Turn::assistant(result.content.trim()));
    Ok(None)
}

/// Complete records chosen for conversation: every general one, and for
/// task records either all or `subset` per (task, language) drawn with the
/// run seed. Sorted by id.
pub fn select_records(records: &[EvolRecord], subset: Option<usize>, rng_seed: u64) -> Vec<&EvolRecord> {
    let mut chosen: Vec<&EvolRecord> = Vec::new();
    let mut buckets: BTreeMap<(String, String), Vec<&EvolRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_complete()) {
        match (r.source, subset) {
            (SeedSource::AyaCollection, Some(_)) => buckets
                .entry((r.task.clone().unwrap_or_default(), r.language.clone()))
                .or_default()
                .push(r),
            _ => chosen.push(r),
        }
    }
    if let Some(quota) = subset {
        let mut rng = SplitMix64::derive(rng_seed, "conversation-subset");
        for (_, mut bucket) in buckets {
            bucket.sort_by(|a, b| a.id.cmp(&b.id));
            rng.shuffle(&mut bucket);
            chosen.extend(bucket.into_iter().take(quota));
        }
    }
    chosen.sort_by(|a, b| a.id.cmp(&b.id));
    chosen
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRun {
    pub conversations: Vec<Conversation>,
    pub attempted: usize,
    pub complete: usize,
    pub truncated: usize,
}

pub fn build_conversations(
    records: &[EvolRecord],
    registry: &TaxonomyRegistry,
    gateway: &Gateway,
    cfg: &PipelineConfig,
) -> Result<ConversationRun, GatewayError> {
    let selected = select_records(records, cfg.dialogue.subset_per_task_language, cfg.rng_seed);
    let variations = registry.dialogue_variations();
    let grown = par::map(&selected, gateway.concurrency(), |record| {
        let mut rng = SplitMix64::derive(cfg.rng_seed, &Conversation::make_id(&record.id));
        let plan = match plan_conversation(record, variations, &mut rng, cfg.dialogue.max_followups) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("no plan for {}: {e}", record.id);
                return Ok(None);
            }
        };
        extend_conversation(&plan, record, registry, gateway, cfg, &mut rng).map(Some)
    });
    let mut conversations: Vec<Conversation> = grown
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    conversations.sort_by(|a, b| a.id.cmp(&b.id));
    let truncated = conversations
        .iter()
        .filter(|c| c.status == ConversationStatus::TruncatedFailure)
        .count();
    Ok(ConversationRun {
        attempted: selected.len(),
        complete: conversations.len() - truncated,
        truncated,
        conversations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evol::{EvolStatus, Provenance};
    use crate::gateway::mock::{MockEntry, MockStep};
    use crate::gateway::{GatewayLimits, MockScript};

    pub(crate) fn record(id: &str, source: SeedSource, task: Option<&str>, lang: &str) -> EvolRecord {
        EvolRecord {
            id: id.into(),
            seed_id: id.split("::").next().unwrap().into(),
            evol_id: "generic.concise".into(),
            source,
            task: task.map(str::to_string),
            language: lang.into(),
            language_2: None,
            instruction: format!("Evolved instruction for {id}"),
            response: Some(format!("Response for {id}")),
            status: EvolStatus::Complete,
            provenance: Provenance {
                model: "m".into(),
                instruction_temperature: 0.7,
                instruction_attempts: 1,
                instruction_status: None,
                response_temperature: None,
                response_attempts: None,
                response_status: None,
                note: None,
            },
            placeholders: BTreeMap::new(),
        }
    }

    fn general(id: &str) -> EvolRecord {
        record(id, SeedSource::AyaDataset, None, "fr")
    }

    fn plan_for(depth: usize, reg: &TaxonomyRegistry, rec: &EvolRecord) -> ConversationPlan {
        ConversationPlan {
            record_id: rec.id.clone(),
            depth,
            variations: reg.dialogue_variations()[..depth]
                .iter()
                .map(|v| v.id.clone())
                .collect(),
        }
    }

    #[test]
    fn depth_bounds() {
        let reg = TaxonomyRegistry::default_registry();
        let rec = general("a");
        let mut rng = SplitMix64::new(1);
        for _ in 0..200 {
            let p = plan_conversation(&rec, reg.dialogue_variations(), &mut rng, 3).unwrap();
            assert!((1..=3).contains(&p.depth));
            assert_eq!(p.variations.len(), p.depth);
            let mut v = p.variations.clone();
            v.sort();
            v.dedup();
            assert_eq!(v.len(), p.depth);
            let p1 = plan_conversation(&rec, reg.dialogue_variations(), &mut rng, 1).unwrap();
            assert_eq!(p1.depth, 1);
        }
        assert_eq!(
            plan_conversation(&rec, reg.dialogue_variations(), &mut rng, 4),
            Err(DialogueError::BadMaxFollowups(4))
        );
        let mut pending = general("b");
        pending.status = EvolStatus::InstructionOk;
        assert!(matches!(
            plan_conversation(&pending, reg.dialogue_variations(), &mut rng, 3),
            Err(DialogueError::NotComplete(_))
        ));
    }

    #[test]
    fn depth_frequencies_are_uniform() {
        let reg = TaxonomyRegistry::default_registry();
        let rec = general("a");
        let mut rng = SplitMix64::new(2024);
        let mut counts = [0usize; 3];
        for _ in 0..1000 {
            counts[plan_conversation(&rec, reg.dialogue_variations(), &mut rng, 3)
                .unwrap()
                .depth
                - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1000.0 - 1.0 / 3.0).abs() <= 0.05, "{counts:?}");
        }
    }

    #[test]
    fn depth_one_and_three() {
        let reg = TaxonomyRegistry::default_registry();
        let gw = Gateway::mock(MockScript::default(), &GatewayLimits::default());
        let cfg = PipelineConfig::default();
        let rec = general("a");
        let mut rng = SplitMix64::new(0);

        let conv = extend_conversation(&plan_for(1, &reg, &rec), &rec, &reg, &gw, &cfg, &mut rng).unwrap();
        let roles: Vec<_> = conv.turns.iter().map(|t| t.role).collect();
        assert_eq!(roles, [Role::User, Role::Assistant, Role::User, Role::Assistant]);
        assert_eq!(conv.turns[0].content, rec.instruction);
        assert_eq!(conv.turns[1].content, rec.response.clone().unwrap());
        assert_eq!(
            conv.turns[2].follow_up_type.as_deref(),
            Some(reg.dialogue_variations()[0].id.as_str())
        );
        assert!(conv.is_well_formed());

        let conv = extend_conversation(&plan_for(3, &reg, &rec), &rec, &reg, &gw, &cfg, &mut rng).unwrap();
        assert_eq!(conv.turns.len(), 8);
        assert_eq!(conv.user_turns(), 4);
        assert_eq!(conv.status, ConversationStatus::Complete);
        assert!(conv.is_well_formed());
    }

    #[test]
    fn unparsable_followup_truncates() {
        let reg = TaxonomyRegistry::default_registry();
        let rec = general("a");
        let conv_id = Conversation::make_id(&rec.id);
        let script = MockScript {
            entries: vec![MockEntry::for_tag(
                followup_tag(&conv_id, 1),
                vec![MockStep::Ok("not json at all".into())],
            )],
            ..MockScript::default()
        };
        let gw = Gateway::mock(script, &GatewayLimits::default());
        let conv = extend_conversation(
            &plan_for(2, &reg, &rec),
            &rec,
            &reg,
            &gw,
            &PipelineConfig::default(),
            &mut SplitMix64::new(0),
        )
        .unwrap();
        assert_eq!(conv.status, ConversationStatus::TruncatedFailure);
        assert_eq!(conv.turns.len(), 2);
        assert!(conv.is_well_formed());
    }

    #[test]
    fn failed_reply_drops_dangling_user_turn() {
        let reg = TaxonomyRegistry::default_registry();
        let rec = general("a");
        let conv_id = Conversation::make_id(&rec.id);
        let script = MockScript {
            entries: vec![MockEntry::for_tag(reply_tag(&conv_id, 2), vec![MockStep::Timeout])],
            ..MockScript::default()
        };
        let gw = Gateway::mock(script, &GatewayLimits::default());
        let conv = extend_conversation(
            &plan_for(3, &reg, &rec),
            &rec,
            &reg,
            &gw,
            &PipelineConfig::default(),
            &mut SplitMix64::new(0),
        )
        .unwrap();
        assert_eq!(conv.status, ConversationStatus::TruncatedFailure);
        assert_eq!(conv.turns.len(), 4);
        assert_eq!(conv.turns.last().unwrap().role, Role::Assistant);
    }

    #[test]
    fn subset_per_task_language() {
        let mut recs = Vec::new();
        for task in ["soda", "pawsx"] {
            for lang in ["fr", "de", "es"] {
                for i in 0..4 {
                    recs.push(record(
                        &format!("{task}-{lang}-{i}::x"),
                        SeedSource::AyaCollection,
                        Some(task),
                        lang,
                    ));
                }
            }
        }
        recs.push(general("g1::x"));
        let picked = select_records(&recs, Some(2), 5);
        assert_eq!(picked.len(), 2 * 2 * 3 + 1);
        assert_eq!(select_records(&recs, None, 5).len(), recs.len());
        let other = select_records(&recs, Some(2), 6);
        assert_eq!(other.len(), picked.len());

        let reg = TaxonomyRegistry::default_registry();
        let gw = Gateway::mock(MockScript::default(), &GatewayLimits::default());
        let mut cfg = PipelineConfig::default();
        cfg.dialogue.subset_per_task_language = Some(2);
        let run = build_conversations(&recs, &reg, &gw, &cfg).unwrap();
        assert_eq!(run.attempted, 13);
        assert_eq!(run.conversations.len(), 13);
        assert!(build_conversations(&[], &reg, &gw, &cfg)
            .unwrap()
            .conversations
            .is_empty());
    }
}
