//! Instruction-evol and dialogue-evol taxonomies.
//!
//! The taxonomy is a JSON document with two arrays, `instruction_evols` and
//! `dialogue_evols`. A default document ships with the crate and holds the
//! 6 generic conditions, 9 conditions for each of 17 tasks, and the 21
//! dialogue variations. Registries are immutable once loaded.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::{SeedRecord, SeedSource};
use crate::template;

/// Default taxonomy document.
pub const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

pub const GENERIC_CONDITIONS: usize = 6;
pub const CONDITIONS_PER_TASK: usize = 9;
pub const DIALOGUE_VARIATIONS: usize = 21;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("taxonomy does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("placeholder mismatch in `{id}`: {detail}")]
    PlaceholderMismatch { id: String, detail: String },
    #[error("task `{task}` has {count} conditions, expected {expected}")]
    TaskCardinality {
        task: String,
        count: usize,
        expected: usize,
    },
    #[error("{count} generic conditions, expected {expected}")]
    GenericCardinality { count: usize, expected: usize },
    #[error("{count} dialogue variations, expected {expected}")]
    DialogueCardinality { count: usize, expected: usize },
    #[error("unsupported task `{0}`")]
    UnsupportedTask(String),
    #[error("seed `{0}` comes from aya-collection but carries no task")]
    MissingTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolStage {
    InstructionEvol,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Applicability {
    Generic(GenericTag),
    Task { task: String },
}

/// Serialises as the bare string `"generic"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenericTag {
    Generic,
}

impl Applicability {
    pub fn generic() -> Self {
        Applicability::Generic(GenericTag::Generic)
    }

    pub fn task(&self) -> Option<&str> {
        match self {
            Applicability::Generic(_) => None,
            Applicability::Task { task } => Some(task),
        }
    }

    pub fn is_generic(&self) -> bool {
        matches!(self, Applicability::Generic(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolCondition {
    pub id: String,
    pub name: String,
    pub stage: EvolStage,
    pub applicability: Applicability,
    pub template: String,
    pub placeholders: Vec<String>,
}

impl EvolCondition {
    pub fn declares(&self, name: &str) -> bool {
        self.placeholders.iter().any(|p| p == name)
    }

    /// Cross-lingual conditions are recognised by a `<language_2>` token.
    pub fn is_cross_lingual(&self) -> bool {
        self.declares(template::LANGUAGE_2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DialogueCategory {
    #[serde(rename = "Follow-up")]
    FollowUp,
    Refinement,
    Expansion,
    Recollection,
}

impl fmt::Display for DialogueCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DialogueCategory::FollowUp => "Follow-up",
            DialogueCategory::Refinement => "Refinement",
            DialogueCategory::Expansion => "Expansion",
            DialogueCategory::Recollection => "Recollection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueVariation {
    pub id: String,
    pub name: String,
    pub category: DialogueCategory,
    pub directive: String,
    #[serde(default)]
    pub placeholders: Vec<String>,
}

/// On-disk shape of a taxonomy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    #[serde(default = "default_version")]
    pub version: u32,
    pub instruction_evols: Vec<EvolCondition>,
    pub dialogue_evols: Vec<DialogueVariation>,
}

fn default_version() -> u32 {
    1
}

/// Expected bucket sizes. The defaults encode the shipped taxonomy; a
/// different set can be supplied for user-extended documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cardinality {
    pub generic: Option<usize>,
    pub per_task: Option<usize>,
    pub dialogue: Option<usize>,
}

impl Default for Cardinality {
    fn default() -> Self {
        Self {
            generic: Some(GENERIC_CONDITIONS),
            per_task: Some(CONDITIONS_PER_TASK),
            dialogue: Some(DIALOGUE_VARIATIONS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyRegistry {
    instruction_conditions: Vec<EvolCondition>,
    dialogue_variations: Vec<DialogueVariation>,
    task_names: BTreeSet<String>,
}

impl TaxonomyRegistry {
    /// The registry built from the shipped document.
    pub fn default_registry() -> Self {
        Self::from_json(DEFAULT_TAXONOMY_JSON).expect("shipped taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        Self::from_json_with(text, Cardinality::default())
    }

    pub fn from_json_with(text: &str, rules: Cardinality) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDocument = serde_json::from_str(text)?;
        Self::from_document(doc, rules)
    }

    pub fn from_document(doc: TaxonomyDocument, rules: Cardinality) -> Result<Self, TaxonomyError> {
        let mut ids = HashSet::new();
        for id in doc
            .instruction_evols
            .iter()
            .map(|c| &c.id)
            .chain(doc.dialogue_evols.iter().map(|v| &v.id))
        {
            if !ids.insert(id.as_str()) {
                return Err(TaxonomyError::DuplicateId(id.clone()));
            }
        }

        for cond in &doc.instruction_evols {
            check_placeholders(
                &cond.id,
                &cond.template,
                &cond.placeholders,
                template::EVOL_PLACEHOLDERS,
            )?;
            if !cond.declares(template::PROMPT) {
                return Err(mismatch(&cond.id, "template never embeds <prompt>"));
            }
            if cond.applicability.is_generic() {
                if let Some(p) = cond
                    .placeholders
                    .iter()
                    .find(|p| template::CROSS_LINGUAL_PLACEHOLDERS.contains(&p.as_str()))
                {
                    return Err(mismatch(&cond.id, &format!("generic condition uses task-only <{p}>")));
                }
            }
        }
        for var in &doc.dialogue_evols {
            check_placeholders(
                &var.id,
                &var.directive,
                &var.placeholders,
                template::DIRECTIVE_PLACEHOLDERS,
            )?;
        }

        let mut per_task: BTreeMap<&str, usize> = BTreeMap::new();
        let mut generic = 0;
        for cond in &doc.instruction_evols {
            match cond.applicability.task() {
                Some(task) => *per_task.entry(task).or_default() += 1,
                None => generic += 1,
            }
        }
        if let Some(expected) = rules.generic {
            if generic != expected {
                return Err(TaxonomyError::GenericCardinality {
                    count: generic,
                    expected,
                });
            }
        }
        if let Some(expected) = rules.per_task {
            if let Some((task, &count)) = per_task.iter().find(|(_, &n)| n != expected) {
                return Err(TaxonomyError::TaskCardinality {
                    task: task.to_string(),
                    count,
                    expected,
                });
            }
        }
        if let Some(expected) = rules.dialogue {
            if doc.dialogue_evols.len() != expected {
                return Err(TaxonomyError::DialogueCardinality {
                    count: doc.dialogue_evols.len(),
                    expected,
                });
            }
        }

        let task_names = per_task.keys().map(|t| t.to_string()).collect();
        let mut dialogue_variations = doc.dialogue_evols;
        dialogue_variations.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            instruction_conditions: doc.instruction_evols,
            dialogue_variations,
            task_names,
        })
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            version: 1,
            instruction_evols: self.instruction_conditions.clone(),
            dialogue_evols: self.dialogue_variations.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("taxonomy serialises")
    }

    pub fn instruction_conditions(&self) -> &[EvolCondition] {
        &self.instruction_conditions
    }

    pub fn task_names(&self) -> &BTreeSet<String> {
        &self.task_names
    }

    pub fn generic_conditions(&self) -> impl Iterator<Item = &EvolCondition> {
        self.instruction_conditions
            .iter()
            .filter(|c| c.applicability.is_generic())
    }

    pub fn task_conditions<'a>(&'a self, task: &'a str) -> impl Iterator<Item = &'a EvolCondition> + 'a {
        self.instruction_conditions
            .iter()
            .filter(move |c| c.applicability.task() == Some(task))
    }

    pub fn condition(&self, id: &str) -> Option<&EvolCondition> {
        self.instruction_conditions.iter().find(|c| c.id == id)
    }

    /// All dialogue variations, sorted by id.
    pub fn dialogue_variations(&self) -> &[DialogueVariation] {
        &self.dialogue_variations
    }

    pub fn variation(&self, id: &str) -> Option<&DialogueVariation> {
        self.dialogue_variations
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.dialogue_variations[i])
    }

    /// Conditions that apply to a seed: the generic set for general seeds,
    /// the task's own set for task seeds.
    pub fn conditions_for(&self, seed: &SeedRecord) -> Result<Vec<&EvolCondition>, TaxonomyError> {
        match seed.source {
            SeedSource::AyaDataset => Ok(self.generic_conditions().collect()),
            SeedSource::AyaCollection => {
                let task = seed
                    .task
                    .as_deref()
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| TaxonomyError::MissingTask(seed.id.clone()))?;
                if !self.task_names.contains(task) {
                    return Err(TaxonomyError::UnsupportedTask(task.to_string()));
                }
                Ok(self
                    .instruction_conditions
                    .iter()
                    .filter(|c| c.applicability.task() == Some(task))
                    .collect())
            }
        }
    }
}

/// Read and validate a taxonomy file against the default cardinalities.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<TaxonomyRegistry, TaxonomyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TaxonomyRegistry::from_json(&text)
}

/// Free-function form of [`TaxonomyRegistry::conditions_for`].
pub fn conditions_for<'a>(
    seed: &SeedRecord,
    registry: &'a TaxonomyRegistry,
) -> Result<Vec<&'a EvolCondition>, TaxonomyError> {
    registry.conditions_for(seed)
}

pub fn dialogue_variations(registry: &TaxonomyRegistry) -> &[DialogueVariation] {
    registry.dialogue_variations()
}

fn mismatch(id: &str, detail: &str) -> TaxonomyError {
    TaxonomyError::PlaceholderMismatch {
        id: id.to_string(),
        detail: detail.to_string(),
    }
}

fn check_placeholders(id: &str, text: &str, declared: &[String], allowed: &[&str]) -> Result<(), TaxonomyError> {
    let found = template::names(text);
    for name in &found {
        if !declared.contains(name) {
            return Err(mismatch(id, &format!("undeclared placeholder `{name}`")));
        }
    }
    for name in declared {
        if !allowed.contains(&name.as_str()) {
            return Err(mismatch(id, &format!("`{name}` is not a known placeholder here")));
        }
        if !found.contains(name) {
            return Err(mismatch(id, &format!("declared `{name}` never appears")));
        }
        if !text.contains(&template::token_for(name)) {
            return Err(mismatch(id, &format!("`{name}` appears in the wrong token form")));
        }
    }
    Ok(())
}
