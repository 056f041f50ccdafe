//! Turning taxonomy entries into concrete backend prompts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Turn;
use crate::gateway::{Message, Role};
use crate::rng::SplitMix64;
use crate::seeds::SeedRecord;
use crate::taxonomy::{DialogueVariation, EvolCondition};
use crate::template;

pub const LANGUAGES_JSON: &str = include_str!("../data/languages.json");
pub const FOLLOWUP_SCAFFOLD: &str = include_str!("../data/followup_scaffold.txt");

/// Values drawn for `{property}` in the rewriting variation.
pub const PROPERTY_POOL: &[&str] = &["tone", "length", "formality", "structure", "vocabulary"];

/// Label the evol templates ask the model to produce before its rewrite.
pub const NEW_PROMPT_LABEL: &str = "#new_prompt#";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("language pool is empty")]
    EmptyPool,
    #[error("no partner language for `{0}` in the pool")]
    NoPartner(String),
    #[error("`{origin}` needs a value for `{name}`")]
    MissingPlaceholder { origin: String, name: String },
    #[error("head instruction is empty")]
    EmptyInstruction,
    #[error("history is empty")]
    EmptyHistory,
    #[error("history must alternate user/assistant starting with user (turn {0})")]
    Alternation(usize),
    #[error("history ends with an assistant turn")]
    EndsWithAssistant,
}

/// Code to display-name table plus the romanization-capable sublist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageTable {
    pub names: BTreeMap<String, String>,
    pub romanization: Vec<String>,
}

impl Default for LanguageTable {
    fn default() -> Self {
        serde_json::from_str(LANGUAGES_JSON).expect("shipped language table parses")
    }
}

impl LanguageTable {
    /// Display name, or the code itself when unknown.
    pub fn name<'a>(&'a self, code: &'a str) -> &'a str {
        self.names.get(code).map(String::as_str).unwrap_or(code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageAssignment {
    pub language_1: String,
    pub language_2: Option<String>,
    pub transliteration_language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub origin_condition: String,
    pub resolved_placeholders: BTreeMap<String, String>,
}

/// Pick the languages a condition needs.
///
/// `language_2` is drawn uniformly from `pool` minus the seed language, and
/// only when the condition declares it. A transliteration target is the seed
/// language when it is in `translit_pool`, otherwise a uniform draw from it;
/// it stays unset when the pool is empty, which later surfaces as a missing
/// placeholder.
pub fn assign_languages(
    seed: &SeedRecord,
    cond: &EvolCondition,
    pool: &[String],
    translit_pool: &[String],
    rng: &mut SplitMix64,
) -> Result<LanguageAssignment, PromptError> {
    if pool.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    let language_1 = seed.language.clone();
    let language_2 = if cond.declares(template::LANGUAGE_2) {
        let partners: Vec<&String> = pool.iter().filter(|l| **l != language_1).collect();
        if partners.is_empty() {
            return Err(PromptError::NoPartner(language_1));
        }
        Some(partners[rng.below(partners.len())].clone())
    } else {
        None
    };
    let transliteration_language = if cond.declares(template::TRANSLIT_LANGUAGE) {
        if translit_pool.contains(&language_1) {
            Some(language_1.clone())
        } else if translit_pool.is_empty() {
            None
        } else {
            Some(translit_pool[rng.below(translit_pool.len())].clone())
        }
    } else {
        None
    };
    Ok(LanguageAssignment {
        language_1,
        language_2,
        transliteration_language,
    })
}

fn render_declared(
    origin: &str,
    text: &str,
    declared: &[String],
    available: &BTreeMap<String, String>,
) -> Result<PromptText, PromptError> {
    let mut resolved = BTreeMap::new();
    for name in declared {
        let value = available.get(name).ok_or_else(|| PromptError::MissingPlaceholder {
            origin: origin.to_string(),
            name: name.clone(),
        })?;
        resolved.insert(name.clone(), value.clone());
    }
    let text = template::render(text, &resolved).map_err(|name| PromptError::MissingPlaceholder {
        origin: origin.to_string(),
        name,
    })?;
    Ok(PromptText {
        text,
        origin_condition: origin.to_string(),
        resolved_placeholders: resolved,
    })
}

/// Fill a condition's template. Languages appear by display name; the seed
/// instruction is embedded verbatim.
pub fn render_evol_prompt(
    cond: &EvolCondition,
    seed: &SeedRecord,
    langs: &LanguageAssignment,
    table: &LanguageTable,
) -> Result<PromptText, PromptError> {
    let mut values = BTreeMap::new();
    values.insert(template::PROMPT.to_string(), seed.instruction.clone());
    let lang1 = table.name(&langs.language_1).to_string();
    values.insert(template::PROMPT_LANGUAGE.to_string(), lang1.clone());
    values.insert(template::LANGUAGE_1.to_string(), lang1);
    if let Some(l2) = &langs.language_2 {
        values.insert(template::LANGUAGE_2.to_string(), table.name(l2).to_string());
    }
    if let Some(t) = &langs.transliteration_language {
        values.insert(template::TRANSLIT_LANGUAGE.to_string(), table.name(t).to_string());
    }
    render_declared(&cond.id, &cond.template, &cond.placeholders, &values)
}

/// Fill the follow-up scaffold for one dialogue variation. The rng is only
/// advanced when the directive carries `{property}`.
pub fn render_followup_prompt(
    head_instruction: &str,
    variation: &DialogueVariation,
    language: &str,
    table: &LanguageTable,
    rng: &mut SplitMix64,
) -> Result<PromptText, PromptError> {
    if head_instruction.trim().is_empty() {
        return Err(PromptError::EmptyInstruction);
    }
    let mut directive_values = BTreeMap::new();
    if variation.placeholders.iter().any(|p| p == template::PROPERTY) {
        let property = PROPERTY_POOL[rng.below(PROPERTY_POOL.len())];
        directive_values.insert(template::PROPERTY.to_string(), property.to_string());
    }
    let directive = render_declared(
        &variation.id,
        &variation.directive,
        &variation.placeholders,
        &directive_values,
    )?;

    let mut values = directive.resolved_placeholders.clone();
    values.insert(template::INSTRUCTION.to_string(), head_instruction.to_string());
    values.insert(template::FOLLOW_UP_TYPE.to_string(), directive.text);
    values.insert(template::LANGUAGE.to_string(), table.name(language).to_string());
    let declared: Vec<String> = template::SCAFFOLD_PLACEHOLDERS.iter().map(|s| s.to_string()).collect();
    let mut out = render_declared(&variation.id, FOLLOWUP_SCAFFOLD, &declared, &values)?;
    out.resolved_placeholders.extend(directive.resolved_placeholders);
    Ok(out)
}

/// The whole history as gateway messages. It must alternate starting with a
/// user turn and end on a user turn.
pub fn render_response_request(turns: &[Turn]) -> Result<Vec<Message>, PromptError> {
    if turns.is_empty() {
        return Err(PromptError::EmptyHistory);
    }
    for (i, turn) in turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if turn.role != expected {
            return Err(PromptError::Alternation(i));
        }
    }
    if turns.len().is_multiple_of(2) {
        return Err(PromptError::EndsWithAssistant);
    }
    Ok(turns
        .iter()
        .map(|t| Message {
            role: t.role,
            content: t.content.clone(),
        })
        .collect())
}

/// Strip a leading `#new_prompt#:` label (with optional `**` emphasis) from
/// a generated instruction and trim it.
pub fn clean_evolved_instruction(raw: &str) -> String {
    let mut text = raw.trim();
    let unbolded = text.trim_start_matches('*');
    if let Some(rest) = unbolded.strip_prefix(NEW_PROMPT_LABEL) {
        text = rest
            .trim_start_matches('*')
            .trim_start_matches(':')
            .trim_start_matches('*');
    }
    text.trim().to_string()
}
