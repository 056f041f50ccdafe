//! Placeholder grammar shared by taxonomy templates and the multi-turn scaffold.
//!
//! Two token shapes exist: `<name>` for instruction-evol templates and
//! `{name}` for the follow-up scaffold and dialogue directives. Names are
//! lowercase identifiers. Substitution is single-pass, so values that happen
//! to contain token-like text are never expanded again.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<([a-z][a-z0-9_]*)>|\{([a-z][a-z0-9_]*)\}").unwrap());

pub const PROMPT: &str = "prompt";
pub const PROMPT_LANGUAGE: &str = "prompt_language";
pub const TRANSLIT_LANGUAGE: &str = "translit_language";
pub const LANGUAGE_1: &str = "language_1";
pub const LANGUAGE_2: &str = "language_2";
pub const INSTRUCTION: &str = "instruction";
pub const FOLLOW_UP_TYPE: &str = "follow_up_type";
pub const LANGUAGE: &str = "language";
pub const PROPERTY: &str = "property";

/// Names usable in instruction-evol templates (angle-bracket form).
pub const EVOL_PLACEHOLDERS: &[&str] = &[PROMPT, PROMPT_LANGUAGE, TRANSLIT_LANGUAGE, LANGUAGE_1, LANGUAGE_2];
/// Names only meaningful for task conditions with a partner language.
pub const CROSS_LINGUAL_PLACEHOLDERS: &[&str] = &[LANGUAGE_1, LANGUAGE_2];
/// Names usable in dialogue directives.
pub const DIRECTIVE_PLACEHOLDERS: &[&str] = &[PROPERTY];
/// Names used by the follow-up scaffold (brace form).
pub const SCAFFOLD_PLACEHOLDERS: &[&str] = &[INSTRUCTION, FOLLOW_UP_TYPE, LANGUAGE];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub name: &'a str,
    pub braced: bool,
    pub start: usize,
    pub end: usize,
}

/// All placeholder tokens in `text`, in order of appearance.
pub fn scan(text: &str) -> Vec<Token<'_>> {
    TOKEN
        .captures_iter(text)
        .map(|caps| {
            let whole = caps.get(0).unwrap();
            let (name, braced) = match caps.get(1) {
                Some(m) => (m.as_str(), false),
                None => (caps.get(2).unwrap().as_str(), true),
            };
            Token {
                name,
                braced,
                start: whole.start(),
                end: whole.end(),
            }
        })
        .collect()
}

/// Distinct placeholder names in order of first appearance.
pub fn names(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for token in scan(text) {
        if !out.iter().any(|n| n == token.name) {
            out.push(token.name.to_string());
        }
    }
    out
}

/// Canonical token text for a name, e.g. `<prompt>` or `{property}`.
pub fn token_for(name: &str) -> String {
    if EVOL_PLACEHOLDERS.contains(&name) {
        format!("<{name}>")
    } else {
        format!("{{{name}}}")
    }
}

/// Replace every token with its value. Fails on the first token whose name
/// has no value.
pub fn render(template: &str, values: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut cursor = 0;
    for token in scan(template) {
        let value = values.get(token.name).ok_or_else(|| token.name.to_string())?;
        out.push_str(&template[cursor..token.start]);
        out.push_str(value);
        cursor = token.end;
    }
    out.push_str(&template[cursor..]);
    Ok(out)
}
