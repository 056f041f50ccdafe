use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use evolforge::dataset::{self, ExportFormat, StageInput, StreamProfile, WhitespaceTokenizer};
use evolforge::dialogue::{self, Conversation};
use evolforge::evol::{self, EvolRecord, RunManifest};
use evolforge::filter::{self, HttpModeration, ModerationClient, SentinelClassifier};
use evolforge::gateway::{Gateway, HttpBackend, MockScript, ResponseCache, SystemClock};
use evolforge::jsonl::{self, LineRejection};
use evolforge::pipeline;
use evolforge::seeds::{self, AyaProfile, SeedRecord, SeedSet, SeedSource};
use evolforge::taxonomy::{self, TaxonomyRegistry};
use evolforge::PipelineConfig;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::{AyaKind, FilterKind, Global};

const DEFAULT_SENTINEL: &str = "[[unsafe]]";

struct Setup {
    cfg: PipelineConfig,
    registry: TaxonomyRegistry,
    fingerprint: String,
}

fn setup(g: &Global) -> Result<Setup> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.rng_seed {
        cfg.rng_seed = s;
    }
    if let Some(c) = g.concurrency {
        if c == 0 {
            bail!("--concurrency must be at least 1");
        }
        cfg.gateway.concurrency = c;
    }
    if let Some(u) = &g.backend_url {
        cfg.backend_url = Some(u.clone());
    }
    cfg.validate()?;
    let registry = match &cfg.taxonomy_path {
        Some(p) => taxonomy::load_taxonomy(p)?,
        None => TaxonomyRegistry::default_registry(),
    };
    let fingerprint = cfg.fingerprint(&registry);
    Ok(Setup {
        cfg,
        registry,
        fingerprint,
    })
}

fn gateway(g: &Global, cfg: &PipelineConfig) -> Result<Gateway> {
    let gw = match (&g.mock, &cfg.backend_url) {
        (Some(script), _) => {
            let script = if script.is_empty() {
                MockScript::default()
            } else {
                MockScript::load(script).map_err(|e| anyhow!("mock script {e}"))?
            };
            Gateway::mock(script, &cfg.gateway)
        }
        (None, Some(url)) => Gateway::new(
            HttpBackend::from_env(url)?,
            &cfg.gateway,
            Arc::new(SystemClock::default()),
        ),
        (None, None) => bail!("no backend: pass --backend-url (or set backend_url in the config) or --mock"),
    };
    Ok(match &g.cache {
        Some(p) => gw.with_cache(ResponseCache::open(p).with_context(|| format!("opening cache {}", p.display()))?),
        None => gw,
    })
}

fn out_path(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_sidecar(path: &Path, value: &Value) -> Result<()> {
    let side = sidecar(path);
    std::fs::write(&side, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", side.display()))
}

/// Fingerprint recorded next to an input, if any.
fn recorded_fingerprint(path: &Path) -> Option<String> {
    let text = std::fs::read_to_string(sidecar(path)).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    v.get("fingerprint")?.as_str().map(str::to_string)
}

fn warn_on_mismatch(path: &Path, fingerprint: &str) {
    if let Some(found) = recorded_fingerprint(path) {
        if found != fingerprint {
            log::warn!("{} was produced under a different config ({found})", path.display());
        }
    }
}

fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let (items, rejections) = jsonl::read_typed(path).with_context(|| format!("reading {}", path.display()))?;
    report_rejections(path, &rejections);
    Ok(items)
}

fn report_rejections(path: &Path, rejections: &[LineRejection]) {
    for r in rejections.iter().take(5) {
        eprintln!("{}:{}: rejected: {}", path.display(), r.line, r.reason);
    }
    if rejections.len() > 5 {
        eprintln!("{}: {} more rejected lines", path.display(), rejections.len() - 5);
    }
}

fn write<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<usize> {
    jsonl::write_all(path, items).with_context(|| format!("writing {}", path.display()))
}

fn counts_table(title: &str, counts: &BTreeMap<String, usize>) -> String {
    let width = counts.keys().map(String::len).chain([title.len()]).max().unwrap_or(0);
    let mut out = String::new();
    writeln!(out, "| {title:<width$} | Count |").unwrap();
    writeln!(out, "|-{}-|-------|", "-".repeat(width)).unwrap();
    for (k, v) in counts {
        writeln!(out, "| {k:<width$} | {v:>5} |").unwrap();
    }
    out
}

pub fn seeds_sample(g: &Global, inputs: &[PathBuf]) -> Result<()> {
    let ctx = setup(g)?;
    let out = out_path(g)?;
    let mut pool = Vec::new();
    let mut rejected = Vec::new();
    for path in inputs {
        let ingest = seeds::read_seeds(path)?;
        report_rejections(path, &ingest.rejections);
        rejected.extend(
            ingest
                .rejections
                .into_iter()
                .map(|r| json!({"file": path, "line": r.line, "reason": r.reason})),
        );
        pool.extend(ingest.records);
    }
    let excluded = ctx.cfg.sampling.excluded_tasks.iter().cloned().collect();
    let set = seeds::sample_balanced(
        &seeds::apply_exclusions(pool, &excluded),
        ctx.cfg.sampling.per_language,
        ctx.cfg.sampling.per_task_per_language,
        ctx.cfg.rng_seed,
    );
    write(out, &set.records)?;
    let counts: BTreeMap<String, usize> = [SeedSource::AyaDataset, SeedSource::AyaCollection]
        .iter()
        .map(|s| (s.to_string(), set.count(*s)))
        .collect();
    write_sidecar(
        out,
        &json!({
            "stage": "seeds",
            "fingerprint": ctx.fingerprint,
            "rng_seed": ctx.cfg.rng_seed,
            "counts": counts,
            "languages": set.languages().len(),
            "deficits": set.deficits,
            "rejections": rejected,
        }),
    )?;
    print!("{}", counts_table("Source", &counts));
    if !set.deficits.is_empty() {
        println!("{} buckets short of quota (see manifest)", set.deficits.len());
    }
    Ok(())
}

pub fn seeds_convert(g: &Global, input: &Path, kind: AyaKind) -> Result<()> {
    let out = out_path(g)?;
    let profile = match kind {
        AyaKind::AyaDataset => AyaProfile::aya_dataset(),
        AyaKind::AyaCollection => AyaProfile::aya_collection(),
    };
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let (records, rejections) = jsonl::parse_lines(BufReader::new(file), |line, n| {
        let row: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        seeds::convert_aya_row(&row, &profile, n)
    })?;
    report_rejections(input, &rejections);
    write(out, &records)?;
    write_sidecar(
        out,
        &json!({"stage": "convert", "source": profile.source, "converted": records.len(), "rejected": rejections}),
    )?;
    println!("converted {} rows, rejected {}", records.len(), rejections.len());
    Ok(())
}

fn status_table(m: &RunManifest) -> String {
    let mut t = counts_table("Status", &m.status_counts);
    writeln!(
        t,
        "attempted: {}; unsupported seeds: {}",
        m.attempted,
        m.unsupported_seeds.len()
    )
    .unwrap();
    t
}

pub fn evolve(g: &Global, seeds_path: &Path) -> Result<()> {
    let ctx = setup(g)?;
    let out = out_path(g)?;
    let gw = gateway(g, &ctx.cfg)?;
    warn_on_mismatch(seeds_path, &ctx.fingerprint);
    let records: Vec<SeedRecord> = read(seeds_path)?;
    let set = SeedSet {
        records,
        deficits: BTreeMap::new(),
    };
    let run = evol::run_instruction_evol(&set, &ctx.registry, &gw, &ctx.cfg)?;
    let records = evol::generate_responses(run.records, &gw, &ctx.cfg)?;
    let mut manifest = RunManifest::from_records(&records);
    manifest.unsupported_seeds = run.manifest.unsupported_seeds;
    write(out, &records)?;
    write_sidecar(
        out,
        &json!({"stage": "evols", "fingerprint": ctx.fingerprint, "rng_seed": ctx.cfg.rng_seed, "manifest": manifest}),
    )?;
    print!("{}", status_table(&manifest));
    Ok(())
}

pub fn converse(g: &Global, evols_path: &Path) -> Result<()> {
    let ctx = setup(g)?;
    let out = out_path(g)?;
    let gw = gateway(g, &ctx.cfg)?;
    warn_on_mismatch(evols_path, &ctx.fingerprint);
    let records: Vec<EvolRecord> = read(evols_path)?;
    let run = dialogue::build_conversations(&records, &ctx.registry, &gw, &ctx.cfg)?;
    write(out, &run.conversations)?;
    let counts: BTreeMap<String, usize> = [
        ("attempted".to_string(), run.attempted),
        ("complete".to_string(), run.complete),
        ("truncated-failure".to_string(), run.truncated),
    ]
    .into();
    write_sidecar(
        out,
        &json!({"stage": "conversations", "fingerprint": ctx.fingerprint, "rng_seed": ctx.cfg.rng_seed, "counts": counts}),
    )?;
    print!("{}", counts_table("Conversations", &counts));
    Ok(())
}

pub fn filter(g: &Global, input: &Path, kind: FilterKind) -> Result<()> {
    let ctx = setup(g)?;
    let out = out_path(g)?;
    let fingerprint = recorded_fingerprint(input).unwrap_or(ctx.fingerprint);
    let reasons = match kind {
        FilterKind::Evols => {
            let mut records: Vec<EvolRecord> = read(input)?;
            let reasons = pipeline::filter_evols(&mut records, &ctx.cfg.filter);
            write(out, &records)?;
            write_sidecar(
                out,
                &json!({"stage": "evols", "fingerprint": fingerprint, "manifest": RunManifest::from_records(&records), "filter_reasons": reasons}),
            )?;
            reasons
        }
        FilterKind::Conversations => {
            let convs: Vec<Conversation> = read(input)?;
            let outcome = filter::filter_records(convs, &ctx.cfg.filter);
            let reasons = outcome.reason_counts();
            write(out, &outcome.kept)?;
            let mut dropped_path = out.as_os_str().to_owned();
            dropped_path.push(".dropped.jsonl");
            write(Path::new(&dropped_path), &outcome.dropped)?;
            write_sidecar(
                out,
                &json!({"stage": "conversations", "fingerprint": fingerprint, "kept": outcome.kept.len(), "dropped": outcome.dropped.len(), "filter_reasons": reasons}),
            )?;
            reasons
        }
    };
    print!("{}", counts_table("Drop reason", &reasons));
    Ok(())
}

fn moderation_client(g: &Global, cfg: &PipelineConfig, rules: Option<&Path>) -> Result<Box<dyn ModerationClient>> {
    if let Some(r) = rules {
        return Ok(Box::new(SentinelClassifier::load(r)?));
    }
    if g.mock.is_some() {
        return Ok(Box::new(SentinelClassifier::single(DEFAULT_SENTINEL)));
    }
    let url = cfg
        .backend_url
        .as_deref()
        .ok_or_else(|| anyhow!("no moderation backend: pass --rules, --mock or --backend-url"))?;
    Ok(Box::new(HttpModeration::new(url, 32, cfg.retry.timeout)?))
}

pub fn moderate(g: &Global, input: &Path, rules: Option<&Path>) -> Result<()> {
    let ctx = setup(g)?;
    let out = out_path(g)?;
    let fingerprint = recorded_fingerprint(input).unwrap_or(ctx.fingerprint.clone());
    let convs: Vec<Conversation> = read(input)?;
    let client = moderation_client(g, &ctx.cfg, rules)?;
    let report = filter::moderate(&convs, client.as_ref());
    let before = convs.len();
    let kept = filter::strip_flagged(convs, &report);
    write(out, &kept)?;
    write_sidecar(
        out,
        &json!({"stage": "conversations", "fingerprint": fingerprint, "dropped": before - kept.len(), "report": report}),
    )?;
    print!("{}", report.render_table());
    if !report.is_complete() {
        bail!(
            "{} turns left unscanned: {}",
            report.unscanned.len(),
            report.errors.first().map(String::as_str).unwrap_or("client failure")
        );
    }
    Ok(())
}

pub fn stats(g: &Global, inputs: &[PathBuf], profile: Option<&str>) -> Result<()> {
    let profile = match profile {
        None => None,
        Some("m2lingual") => Some(StreamProfile::m2lingual()),
        Some(path) => Some(StreamProfile::load(path)?),
    };
    let mut files = Vec::new();
    for i in inputs {
        files.extend(dataset::expand_inputs(i)?);
    }
    if files.is_empty() {
        bail!("no input files found");
    }
    let report = dataset::compute_stats_files(&files, &WhitespaceTokenizer, profile.as_ref())?;
    for r in report.rejections.iter().take(5) {
        eprintln!("line {}: rejected: {}", r.line, r.reason);
    }
    if let Some(out) = &g.out {
        std::fs::write(out, serde_json::to_string(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", report.render_table());
    Ok(())
}

pub fn export(g: &Global, seeds_path: &Path, evols_path: &Path, convs_path: &Path) -> Result<()> {
    let ctx = setup(g)?;
    let out = out_path(g)?;
    let format: ExportFormat = g.format.map_or(ExportFormat::ChatTurns, Into::into);
    let seeds: Vec<SeedRecord> = read(seeds_path)?;
    let evols: Vec<EvolRecord> = read(evols_path)?;
    let convs: Vec<Conversation> = read(convs_path)?;
    let fp = |p: &Path| recorded_fingerprint(p).unwrap_or_else(|| ctx.fingerprint.clone());
    let (fs, fe, fc) = (fp(seeds_path), fp(evols_path), fp(convs_path));
    let assembled = dataset::assemble(
        StageInput {
            fingerprint: &fs,
            items: &seeds,
        },
        StageInput {
            fingerprint: &fe,
            items: &evols,
        },
        StageInput {
            fingerprint: &fc,
            items: &convs,
        },
        ctx.cfg.rng_seed,
    )?;
    let written = dataset::export(&assembled.records, out, format)?;
    write_sidecar(
        out,
        &json!({"fingerprint": assembled.manifest.config_fingerprint, "format": format, "written": written, "manifest": assembled.manifest}),
    )?;
    print!("{}", assembled.manifest.render_table());
    Ok(())
}

pub fn run(g: &Global, seed_files: &[PathBuf], rules: Option<&Path>) -> Result<()> {
    let ctx = setup(g)?;
    let dir = out_path(g)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let format: ExportFormat = g.format.map_or(ExportFormat::ChatTurns, Into::into);
    let gw = gateway(g, &ctx.cfg)?;
    let mut pool = Vec::new();
    for path in seed_files {
        let ingest = seeds::read_seeds(path)?;
        report_rejections(path, &ingest.rejections);
        pool.extend(ingest.records);
    }
    let client = match rules {
        Some(_) => Some(moderation_client(g, &ctx.cfg, rules)?),
        None => None,
    };
    let out = pipeline::run_pipeline(pool, &ctx.registry, &gw, &ctx.cfg, client.as_deref())?;

    let side = json!({"fingerprint": out.fingerprint, "rng_seed": ctx.cfg.rng_seed});
    for (name, written) in [
        ("seeds.jsonl", write(&dir.join("seeds.jsonl"), &out.seedset.records)?),
        ("evols.jsonl", write(&dir.join("evols.jsonl"), &out.evols)?),
        (
            "conversations.jsonl",
            write(&dir.join("conversations.jsonl"), &out.conversations)?,
        ),
    ] {
        log::info!("{name}: {written} records");
        write_sidecar(&dir.join(name), &side)?;
    }
    let dataset_path = dir.join("dataset.jsonl");
    dataset::export(&out.dataset.records, &dataset_path, format)?;
    let manifest = json!({
        "fingerprint": out.fingerprint,
        "format": format,
        "dataset": out.dataset.manifest,
        "evols": out.evol_manifest,
        "evol_filter_reasons": out.evol_filter_reasons,
        "conversations": out.conversation_summary,
        "moderation": out.moderation,
        "seed_deficits": out.seedset.deficits,
    });
    write_sidecar(&dataset_path, &manifest)?;

    print!("{}", status_table(&out.evol_manifest));
    println!();
    let s = &out.conversation_summary;
    let conv_counts: BTreeMap<String, usize> = [
        ("attempted".to_string(), s.attempted),
        ("complete".to_string(), s.complete),
        ("truncated-failure".to_string(), s.truncated),
        ("filtered".to_string(), s.filtered),
        ("dropped-by-moderation".to_string(), s.dropped_by_moderation),
        ("exported".to_string(), s.exported),
    ]
    .into();
    print!("{}", counts_table("Conversations", &conv_counts));
    if let Some(r) = &out.moderation {
        println!();
        print!("{}", r.render_table());
    }
    println!();
    print!("{}", out.dataset.manifest.render_table());
    Ok(())
}
