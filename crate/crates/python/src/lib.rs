//! Python bindings. Structured values cross the boundary as JSON strings so
//! the Python side stays a thin `json.loads` away from the Rust types.

use evolforge::dataset::{self, ExportFormat, WhitespaceTokenizer};
use evolforge::gateway::followup;
use evolforge::prompt::{self, LanguageAssignment, LanguageTable};
use evolforge::rng::SplitMix64;
use evolforge::seeds::{self, SeedRecord};
use evolforge::{filter, run_pipeline, Gateway, MockScript, PipelineConfig, TaxonomyRegistry};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json(v: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(v).map_err(value_err)
}

fn registry(taxonomy_json: Option<&str>) -> PyResult<TaxonomyRegistry> {
    match taxonomy_json {
        Some(text) => TaxonomyRegistry::from_json(text).map_err(value_err),
        None => Ok(TaxonomyRegistry::default_registry()),
    }
}

fn config(config_toml: Option<&str>) -> PyResult<PipelineConfig> {
    let cfg = match config_toml {
        Some(text) => PipelineConfig::from_toml(text).map_err(value_err)?,
        None => PipelineConfig::default(),
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

fn parse_seeds(seeds_json: &str) -> PyResult<Vec<SeedRecord>> {
    serde_json::from_str(seeds_json).map_err(value_err)
}

/// The built-in taxonomy (or a custom one) as JSON.
#[pyfunction]
#[pyo3(signature = (taxonomy_json=None))]
fn taxonomy_json(taxonomy_json: Option<&str>) -> PyResult<String> {
    Ok(registry(taxonomy_json)?.to_json())
}

/// `(generic, task_specific, tasks, dialogue)` condition counts.
#[pyfunction]
#[pyo3(signature = (taxonomy_json=None))]
fn taxonomy_counts(taxonomy_json: Option<&str>) -> PyResult<(usize, usize, usize, usize)> {
    let reg = registry(taxonomy_json)?;
    let generic = reg.generic_conditions().count();
    Ok((
        generic,
        reg.instruction_conditions().len() - generic,
        reg.task_names().len(),
        reg.dialogue_variations().len(),
    ))
}

/// Returns `(flagged, worst_ngram, count)`.
#[pyfunction]
#[pyo3(signature = (text, n=4, threshold=3))]
fn ngram_repetition_flag(text: &str, n: usize, threshold: usize) -> (bool, Vec<String>, usize) {
    let r = filter::ngram_repetition_flag(text, n, threshold);
    (r.flagged, r.worst_ngram, r.count)
}

/// Balanced sample of a JSON array of seed records; returns the seed set as JSON.
#[pyfunction]
fn sample_balanced(
    seeds_json: &str,
    per_language: usize,
    per_task_per_language: usize,
    rng_seed: u64,
) -> PyResult<String> {
    let pool = parse_seeds(seeds_json)?;
    to_json(&seeds::sample_balanced(
        &pool,
        per_language,
        per_task_per_language,
        rng_seed,
    ))
}

/// Render one condition's evol prompt for a seed.
#[pyfunction]
#[pyo3(signature = (condition_id, seed_json, language_2=None, transliteration_language=None))]
fn render_evol_prompt(
    condition_id: &str,
    seed_json: &str,
    language_2: Option<String>,
    transliteration_language: Option<String>,
) -> PyResult<String> {
    let reg = TaxonomyRegistry::default_registry();
    let cond = reg
        .condition(condition_id)
        .ok_or_else(|| PyKeyError::new_err(condition_id.to_string()))?;
    let seed: SeedRecord = serde_json::from_str(seed_json).map_err(value_err)?;
    let langs = LanguageAssignment {
        language_1: seed.language.clone(),
        language_2,
        transliteration_language,
    };
    let out = prompt::render_evol_prompt(cond, &seed, &langs, &LanguageTable::default()).map_err(value_err)?;
    Ok(out.text)
}

/// Render the follow-up request for a dialogue variation.
#[pyfunction]
#[pyo3(signature = (head_instruction, variation_id, language, rng_seed=0))]
fn render_followup_prompt(
    head_instruction: &str,
    variation_id: &str,
    language: &str,
    rng_seed: u64,
) -> PyResult<String> {
    let reg = TaxonomyRegistry::default_registry();
    let variation = reg
        .variation(variation_id)
        .ok_or_else(|| PyKeyError::new_err(variation_id.to_string()))?;
    let mut rng = SplitMix64::new(rng_seed);
    let out = prompt::render_followup_prompt(
        head_instruction,
        variation,
        language,
        &LanguageTable::default(),
        &mut rng,
    )
    .map_err(value_err)?;
    Ok(out.text)
}

#[pyfunction]
fn parse_followup_json(raw: &str) -> PyResult<String> {
    followup::parse_followup_json(raw).map(|f| f.text).map_err(value_err)
}

/// Stats over dataset files or directories; returns the report as JSON.
#[pyfunction]
fn compute_stats(paths: Vec<String>) -> PyResult<String> {
    let mut files = Vec::new();
    for p in &paths {
        files.extend(dataset::expand_inputs(p).map_err(value_err)?);
    }
    to_json(&dataset::compute_stats_files(&files, &WhitespaceTokenizer, None).map_err(value_err)?)
}

/// Full pipeline against the mock backend. Returns the dataset as
/// chat-turns JSONL and writes it to `out_path` when given.
#[pyfunction]
#[pyo3(signature = (seeds_json, config_toml=None, out_path=None))]
fn run_mock(py: Python<'_>, seeds_json: &str, config_toml: Option<&str>, out_path: Option<String>) -> PyResult<String> {
    let pool = parse_seeds(seeds_json)?;
    let cfg = config(config_toml)?;
    let out = py
        .detach(|| {
            let gw = Gateway::mock(MockScript::default(), &cfg.gateway);
            run_pipeline(pool, &TaxonomyRegistry::default_registry(), &gw, &cfg, None)
        })
        .map_err(value_err)?;
    if let Some(path) = out_path {
        dataset::export(&out.dataset.records, path, ExportFormat::ChatTurns).map_err(value_err)?;
    }
    let mut lines = String::new();
    for r in &out.dataset.records {
        lines.push_str(&to_json(r)?);
        lines.push('\n');
    }
    Ok(lines)
}

#[pymodule]
#[pyo3(name = "evolforge")]
fn evolforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(taxonomy_json, m)?)?;
    m.add_function(wrap_pyfunction!(taxonomy_counts, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_repetition_flag, m)?)?;
    m.add_function(wrap_pyfunction!(sample_balanced, m)?)?;
    m.add_function(wrap_pyfunction!(render_evol_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(render_followup_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_followup_json, m)?)?;
    m.add_function(wrap_pyfunction!(compute_stats, m)?)?;
    m.add_function(wrap_pyfunction!(run_mock, m)?)?;
    Ok(())
}
