//! Fixtures and reference oracles shared by integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use evolforge::seeds::{SeedRecord, SeedSource};

const WORDS: &[&str] = &[
    "river", "market", "lantern", "harvest", "compass", "meadow", "glacier", "orchard", "violin", "ember", "canyon",
    "pepper", "saddle", "thunder", "velvet", "quarry", "pilgrim", "marble", "falcon", "harbor", "juniper", "kettle",
];

/// A short instruction whose words depend on `salt`, never repeating a word.
pub fn phrase(salt: u64) -> String {
    let mut picked = Vec::new();
    let mut x = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    while picked.len() < 6 {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        let w = WORDS[(x % WORDS.len() as u64) as usize];
        if !picked.contains(&w) {
            picked.push(w);
        }
    }
    format!(
        "Describe the {} near the {} using {} {} {} {} words.",
        picked[0], picked[1], picked[2], picked[3], picked[4], picked[5]
    )
}

pub fn general_seed(lang: &str, i: usize) -> SeedRecord {
    let id = format!("gen-{lang}-{i:04}");
    SeedRecord {
        instruction: phrase(evolforge::rng::fnv1a64(id.as_bytes())),
        response: format!("Reference answer {i} in {lang}."),
        id,
        source: SeedSource::AyaDataset,
        language: lang.into(),
        task: None,
    }
}

pub fn task_seed(task: &str, lang: &str, i: usize) -> SeedRecord {
    let id = format!("task-{task}-{lang}-{i:04}");
    SeedRecord {
        instruction: phrase(evolforge::rng::fnv1a64(id.as_bytes())),
        response: format!("Task answer {i}."),
        id,
        source: SeedSource::AyaCollection,
        language: lang.into(),
        task: Some(task.into()),
    }
}

pub fn corpus(langs: &[&str], general_per_lang: usize, tasks: &[&str], per_task_lang: usize) -> Vec<SeedRecord> {
    let mut out = Vec::new();
    for lang in langs {
        out.extend((0..general_per_lang).map(|i| general_seed(lang, i)));
        for task in tasks {
            out.extend((0..per_task_lang).map(|i| task_seed(task, lang, i)));
        }
    }
    out
}

/// Quadratic reference for the repetition flag: for every start position,
/// count how many positions hold an equal window.
pub fn brute_force_ngram(text: &str, n: usize) -> (Vec<String>, usize) {
    let lowered = text.to_lowercase();
    let toks: Vec<&str> = lowered.split_whitespace().collect();
    if n == 0 || toks.len() < n {
        return (Vec::new(), 0);
    }
    let windows = toks.len() - n + 1;
    let mut best: Option<(Vec<String>, usize)> = None;
    for i in 0..windows {
        let mut c = 0;
        for j in 0..windows {
            if toks[i..i + n] == toks[j..j + n] {
                c += 1;
            }
        }
        let gram: Vec<String> = toks[i..i + n].iter().map(|s| s.to_string()).collect();
        best = match best {
            None => Some((gram, c)),
            Some((bg, bc)) if c > bc || (c == bc && gram < bg) => Some((gram, c)),
            keep => keep,
        };
    }
    best.unwrap()
}

/// Count of each value.
pub fn histogram<'a>(items: impl Iterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut h = HashMap::new();
    for i in items {
        *h.entry(i).or_insert(0) += 1;
    }
    h
}
