//! Taxonomy-guided synthesis of multilingual, multi-turn instruction data.
//!
//! Seeds are sampled per language and task, rewritten under instruction
//! evol conditions, answered, grown into conversations with dialogue
//! variations, filtered, and exported. Every random choice flows from one
//! `rng_seed` through [`rng::SplitMix64`], and the mock backend makes whole
//! runs reproducible offline.

pub mod config;
pub mod dataset;
pub mod dialogue;
pub mod evol;
pub mod filter;
pub mod gateway;
pub mod jsonl;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod rng;
pub mod seeds;
pub mod taxonomy;
pub mod template;

pub use config::PipelineConfig;
pub use dataset::{DatasetManifest, DatasetRecord, ExportFormat, Stage, StatsReport};
pub use dialogue::{Conversation, ConversationPlan, Turn};
pub use evol::{EvolRecord, EvolStatus, RunManifest};
pub use filter::{ngram_repetition_flag, FilterPolicy, RepetitionReport};
pub use gateway::{CompletionRequest, CompletionResult, CompletionStatus, Gateway, MockScript, RetryPolicy};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use seeds::{SeedRecord, SeedSet, SeedSource};
pub use taxonomy::{DialogueVariation, EvolCondition, TaxonomyRegistry};
