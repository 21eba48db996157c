//! Structured-output parsing for model responses.
//!
//! Models are asked for a single JSON object but routinely wrap it in prose
//! or fences. Extraction takes the first balanced JSON object from the raw
//! text; deserialization then enforces the per-stage schema. Inserted text is
//! scanned with full string-literal awareness, so braces inside JSON strings
//! do not confuse the balance count.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("response contains no JSON object")]
    NoJsonObject,
    #[error("response JSON does not match the expected schema: {0}")]
    Schema(#[from] serde_json::Error),
}

/// Returns the first balanced `{...}` region of `text`, honoring string
/// literals and escapes. `None` when no complete object exists.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Extracts and deserializes the first JSON object in `text` as `T`.
pub fn parse_structured<T: DeserializeOwned>(text: &str) -> Result<T, ParseError> {
    let object = extract_json_object(text).ok_or(ParseError::NoJsonObject)?;
    Ok(serde_json::from_str(object)?)
}

/// Generation-stage output schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub question: String,
    pub answer: String,
    pub question_nodes: Vec<String>,
    pub hidden_nodes: Vec<String>,
    pub answer_node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl GenerationOutput {
    /// Checks the declared roles against the graphlet's node names: one or
    /// two question nodes, every role name present in the graphlet, and the
    /// answer node distinct from the question nodes.
    pub fn validate_roles(&self, node_names: &[&str]) -> Result<(), String> {
        if self.question.trim().is_empty() || self.answer.trim().is_empty() {
            return Err("empty question or answer".to_string());
        }
        let count = self.question_nodes.len();
        if !(1..=2).contains(&count) {
            return Err(format!("expected 1 or 2 question nodes, got {count}"));
        }
        let known = |name: &String| node_names.contains(&name.as_str());
        for name in self.question_nodes.iter().chain(self.hidden_nodes.iter()) {
            if !known(name) {
                return Err(format!("role references unknown node {name:?}"));
            }
        }
        if !known(&self.answer_node) {
            return Err(format!("answer node {:?} is not in the graphlet", self.answer_node));
        }
        if self.question_nodes.contains(&self.answer_node) {
            return Err("answer node overlaps the question nodes".to_string());
        }
        Ok(())
    }
}

/// Judge-stage output schema. Both flags must be true for acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutput {
    pub valid_question: bool,
    pub original_answer_valid: bool,
}

impl JudgeOutput {
    pub fn accepted(&self) -> bool {
        self.valid_question && self.original_answer_valid
    }
}

/// Evidence-stage output schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceOutput {
    pub relevant: bool,
    #[serde(default)]
    pub snippets: Vec<String>,
}

/// Yes/no rephrase output schema. Label values are checked later by the
/// rephrase format validator, not at parse time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YesNoOutput {
    pub question: String,
    pub label: String,
}

/// Multiple-choice rephrase output schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOutput {
    pub question: String,
    pub options: Vec<String>,
    pub correct: String,
}
