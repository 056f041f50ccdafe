use evolforge::dataset::{self, DatasetRecord, ExportFormat, Stage, StreamProfile, WhitespaceTokenizer};
use evolforge::dialogue::Turn;
use evolforge::seeds::SeedSource;

fn record(id: &str, stage: Stage, turns: &[&str]) -> DatasetRecord {
    DatasetRecord {
        id: id.into(),
        stage,
        language: "de".into(),
        source: SeedSource::AyaDataset,
        task: None,
        seed_id: id.into(),
        evol_id: None,
        turns: turns
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i % 2 == 0 {
                    Turn::user(*t, None)
                } else {
                    Turn::assistant(*t)
                }
            })
            .collect(),
    }
}

#[test]
fn directory_stats_match_in_memory_stats() {
    let records = vec![
        record("seed::a", Stage::Seed, &["one two", "three"]),
        record("evol::a", Stage::Evoled, &["one two three four", "five six"]),
        record("conv::a", Stage::MultiTurn, &["a b", "c", "d e f", "g h"]),
    ];
    let dir = tempfile::tempdir().unwrap();
    dataset::export(&records[..2], dir.path().join("part-0.jsonl"), ExportFormat::ChatTurns).unwrap();
    dataset::export(&records[2..], dir.path().join("part-1.jsonl"), ExportFormat::ChatTurns).unwrap();
    std::fs::write(dir.path().join("README.md"), "not data").unwrap();

    let files = dataset::expand_inputs(dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let from_files = dataset::compute_stats_files(&files, &WhitespaceTokenizer, None).unwrap();
    let in_memory = dataset::compute_stats(&records, &WhitespaceTokenizer);
    assert_eq!(from_files, in_memory);
    assert_eq!(from_files.stage(Stage::MultiTurn).avg_instruction_tokens, 5.0);
    assert_eq!(from_files.stage(Stage::MultiTurn).avg_response_tokens, 3.0);
}

#[test]
fn foreign_rows_with_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.jsonl");
    let rows = [
        r#"{"type": "seed", "language": "hi", "seed_prompt": "x y", "seed_response": "z"}"#,
        r#"{"type": "Evol", "language": "hi", "task": "soda", "conversation": [{"role": "user", "content": "p q r"}, {"role": "assistant", "content": "s"}]}"#,
        r#"{"type": "MultiTurn", "language": "hi", "conversation": [{"role": "human", "content": "a"}, {"role": "gpt", "content": "b c"}]}"#,
        "not json",
        r#"{"type": "mystery", "language": "hi"}"#,
    ];
    std::fs::write(&path, rows.join("\n")).unwrap();
    let report = dataset::compute_stats_file(&path, &WhitespaceTokenizer, Some(&StreamProfile::m2lingual())).unwrap();
    assert_eq!(Stage::ALL.map(|s| report.stage(s).count), [1, 1, 1]);
    assert_eq!(report.rejections.iter().map(|r| r.line).collect::<Vec<_>>(), vec![4, 5]);
    assert_eq!(report.stage(Stage::Evoled).avg_instruction_tokens, 3.0);
}
