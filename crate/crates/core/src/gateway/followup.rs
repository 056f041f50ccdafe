//! Parsing the JSON object the follow-up scaffold asks for.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FOLLOWUP_KEY: &str = "follow_up_user_prompt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowUpInstruction {
    pub text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FollowUpError {
    #[error("no JSON object in output")]
    NoObject,
    #[error("object has no `follow_up_user_prompt` key")]
    KeyAbsent,
    #[error("`follow_up_user_prompt` is empty or not text")]
    EmptyValue,
}

/// Extract the follow-up instruction from raw model output. Code fences and
/// prose around the outermost `{...}` are ignored.
pub fn parse_followup_json(raw: &str) -> Result<FollowUpInstruction, FollowUpError> {
    let start = raw.find('{').ok_or(FollowUpError::NoObject)?;
    let end = raw.rfind('}').ok_or(FollowUpError::NoObject)?;
    if end < start {
        return Err(FollowUpError::NoObject);
    }
    let value: serde_json::Value = serde_json::from_str(&raw[start..=end]).map_err(|_| FollowUpError::NoObject)?;
    let obj = value.as_object().ok_or(FollowUpError::NoObject)?;
    let text = obj
        .get(FOLLOWUP_KEY)
        .ok_or(FollowUpError::KeyAbsent)?
        .as_str()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or(FollowUpError::EmptyValue)?;
    Ok(FollowUpInstruction { text: text.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_object() {
        let got = parse_followup_json(r#"{"follow_up_user_prompt": "Summarize that in 3 bullets"}"#).unwrap();
        assert_eq!(got.text, "Summarize that in 3 bullets");
    }

    #[test]
    fn fenced_and_wrapped() {
        assert_eq!(
            parse_followup_json("```{\"follow_up_user_prompt\": \"X\"}```")
                .unwrap()
                .text,
            "X"
        );
        let raw =
            "Sure! Here it is:\n```json\n{\n  \"follow_up_user_prompt\": \"Y {with braces}\"\n}\n```\nHope it helps.";
        assert_eq!(parse_followup_json(raw).unwrap().text, "Y {with braces}");
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_followup_json(r#"{"wrong_key": "X"}"#),
            Err(FollowUpError::KeyAbsent)
        );
        assert_eq!(parse_followup_json("no json here"), Err(FollowUpError::NoObject));
        assert_eq!(parse_followup_json("} backwards {"), Err(FollowUpError::NoObject));
        assert_eq!(
            parse_followup_json(r#"{"follow_up_user_prompt": "  "}"#),
            Err(FollowUpError::EmptyValue)
        );
        assert_eq!(
            parse_followup_json(r#"{"follow_up_user_prompt": 3}"#),
            Err(FollowUpError::EmptyValue)
        );
        assert_eq!(parse_followup_json("[1, 2]"), Err(FollowUpError::NoObject));
    }
}
