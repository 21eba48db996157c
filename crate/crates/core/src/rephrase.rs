//! Rephrasing accepted QA pairs into benchmark formats.
//!
//! Two target formats exist: yes/no (question, supporting context, label)
//! and multiple choice (question, four or five options, one correct
//! letter). Each rephrase prompt carries the top style exemplars retrieved
//! by BM25 over the exemplar questions, plus the verified evidence snippets
//! for the pair. Model outputs pass through a strict format validator;
//! failures are accounted for rather than silently retried, so every
//! persisted record is guaranteed well-formed.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{read_jsonl, JsonlError};
use crate::llm::{
    parse_structured, ChatBackend, CompletionRequest, Gateway, McqOutput, RequestFailed,
    YesNoOutput,
};
use crate::prompt::{PromptCatalog, PromptError, StageTemplate};
use crate::qa::QARecord;
use crate::retrieval::{Bm25Index, Document, EvidenceBundle, RetrievalError};

pub const DEFAULT_EXEMPLARS_PER_PROMPT: usize = 3;
pub const MIN_OPTIONS: usize = 4;
pub const MAX_OPTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum RephraseError {
    #[error(transparent)]
    Gateway(#[from] RequestFailed),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("exemplar bank is empty")]
    EmptyExemplars,
    #[error("exemplar {ordinal} is invalid: {violation}")]
    InvalidExemplar { ordinal: usize, violation: FormatViolation },
    #[error("exemplar {ordinal} has format {found}, expected {expected}")]
    ExemplarFormatMismatch { ordinal: usize, found: String, expected: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFormat {
    YesNo,
    MultipleChoice,
}

impl TargetFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetFormat::YesNo => "yes_no",
            TargetFormat::MultipleChoice => "multiple_choice",
        }
    }

    fn stage(&self) -> StageTemplate {
        match self {
            TargetFormat::YesNo => StageTemplate::RephraseYesNo,
            TargetFormat::MultipleChoice => StageTemplate::RephraseMultipleChoice,
        }
    }
}

impl std::fmt::Display for TargetFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Format-specific content of a rephrased record or exemplar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum RephrasedPayload {
    YesNo { question: String, context: String, label: String },
    MultipleChoice { question: String, options: Vec<String>, correct: String },
}

impl RephrasedPayload {
    pub fn format(&self) -> TargetFormat {
        match self {
            RephrasedPayload::YesNo { .. } => TargetFormat::YesNo,
            RephrasedPayload::MultipleChoice { .. } => TargetFormat::MultipleChoice,
        }
    }

    pub fn question(&self) -> &str {
        match self {
            RephrasedPayload::YesNo { question, .. } => question,
            RephrasedPayload::MultipleChoice { question, .. } => question,
        }
    }
}

/// One persisted rephrased record, tied back to its source QA pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RephrasedQA {
    pub qa_id: String,
    #[serde(flatten)]
    pub payload: RephrasedPayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatViolation {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("label {label:?} is not yes or no")]
    BadLabel { label: String },
    #[error("expected {MIN_OPTIONS} to {MAX_OPTIONS} options, got {count}")]
    OptionCount { count: usize },
    #[error("option {index} is empty")]
    EmptyOption { index: usize },
    #[error("options {first} and {second} are identical")]
    DuplicateOptions { first: usize, second: usize },
    #[error("correct letter {correct:?} does not reference one of {count} options")]
    CorrectOutOfRange { correct: String, count: usize },
}

/// Checks the hard format contract every persisted record must satisfy.
pub fn validate_format(payload: &RephrasedPayload) -> Result<(), FormatViolation> {
    if payload.question().trim().is_empty() {
        return Err(FormatViolation::EmptyQuestion);
    }
    match payload {
        RephrasedPayload::YesNo { label, .. } => {
            if label != "yes" && label != "no" {
                return Err(FormatViolation::BadLabel { label: label.clone() });
            }
        }
        RephrasedPayload::MultipleChoice { options, correct, .. } => {
            if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&options.len()) {
                return Err(FormatViolation::OptionCount { count: options.len() });
            }
            for (index, option) in options.iter().enumerate() {
                if option.trim().is_empty() {
                    return Err(FormatViolation::EmptyOption { index });
                }
            }
            for first in 0..options.len() {
                for second in first + 1..options.len() {
                    if options[first] == options[second] {
                        return Err(FormatViolation::DuplicateOptions { first, second });
                    }
                }
            }
            let valid = correct.len() == 1
                && correct
                    .bytes()
                    .next()
                    .map(|b| b.is_ascii_uppercase() && ((b - b'A') as usize) < options.len())
                    .unwrap_or(false);
            if !valid {
                return Err(FormatViolation::CorrectOutOfRange {
                    correct: correct.clone(),
                    count: options.len(),
                });
            }
        }
    }
    Ok(())
}

/// Style exemplars for one target format, searchable by question text.
#[derive(Debug, Clone)]
pub struct ExemplarBank {
    format: TargetFormat,
    payloads: Vec<RephrasedPayload>,
    index: Bm25Index,
}

/// On-disk exemplar schemas: one JSON object per line, no format tag (the
/// file is per-format).
#[derive(Debug, Deserialize)]
struct YesNoExemplarRow {
    question: String,
    context: String,
    label: String,
}

#[derive(Debug, Deserialize)]
struct McqExemplarRow {
    question: String,
    options: Vec<String>,
    correct: String,
}

impl ExemplarBank {
    pub fn from_payloads(
        format: TargetFormat,
        payloads: Vec<RephrasedPayload>,
    ) -> Result<Self, RephraseError> {
        if payloads.is_empty() {
            return Err(RephraseError::EmptyExemplars);
        }
        for (ordinal, payload) in payloads.iter().enumerate() {
            if payload.format() != format {
                return Err(RephraseError::ExemplarFormatMismatch {
                    ordinal,
                    found: payload.format().to_string(),
                    expected: format.to_string(),
                });
            }
            validate_format(payload)
                .map_err(|violation| RephraseError::InvalidExemplar { ordinal, violation })?;
        }
        // Zero-padded ids keep index order equal to file order, so BM25
        // ties resolve to the earliest exemplar.
        let docs: Vec<Document> = payloads
            .iter()
            .enumerate()
            .map(|(i, p)| Document {
                doc_id: format!("{i:08}"),
                title: p.question().to_string(),
                abstract_text: String::new(),
            })
            .collect();
        let index = Bm25Index::build(&docs)?;
        Ok(ExemplarBank { format, payloads, index })
    }

    /// Loads and validates a per-format exemplar JSONL file.
    pub fn load(path: &Path, format: TargetFormat) -> Result<Self, RephraseError> {
        let payloads = match format {
            TargetFormat::YesNo => read_jsonl::<YesNoExemplarRow>(path)?
                .into_iter()
                .map(|row| RephrasedPayload::YesNo {
                    question: row.question,
                    context: row.context,
                    label: row.label,
                })
                .collect(),
            TargetFormat::MultipleChoice => read_jsonl::<McqExemplarRow>(path)?
                .into_iter()
                .map(|row| RephrasedPayload::MultipleChoice {
                    question: row.question,
                    options: row.options,
                    correct: row.correct,
                })
                .collect(),
        };
        Self::from_payloads(format, payloads)
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn format(&self) -> TargetFormat {
        self.format
    }

    /// Seeded sample of `sample_size` exemplars (file order preserved);
    /// `None` or an oversized request keeps the whole bank.
    pub fn subset(&self, sample_size: Option<usize>, seed: u64) -> Result<Self, RephraseError> {
        let Some(k) = sample_size else { return Ok(self.clone()) };
        if k >= self.payloads.len() {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, self.payloads.len(), k).into_vec();
        picked.sort_unstable();
        let payloads = picked.into_iter().map(|i| self.payloads[i].clone()).collect();
        Self::from_payloads(self.format, payloads)
    }

    /// Exemplars most similar to `query` by BM25 over exemplar questions.
    pub fn top(&self, query: &str, k: usize) -> Vec<&RephrasedPayload> {
        self.index
            .retrieve(query, k)
            .into_iter()
            .map(|hit| {
                let i: usize = hit.doc_id.parse().expect("bank ids are ordinals");
                &self.payloads[i]
            })
            .collect()
    }
}

/// Renders exemplars the way the rephrase templates expect.
pub fn format_exemplars_block(exemplars: &[&RephrasedPayload]) -> String {
    let blocks: Vec<String> = exemplars
        .iter()
        .map(|payload| match payload {
            RephrasedPayload::YesNo { question, context, label } => {
                format!("Q: {question}\nContext: {context}\nLabel: {label}")
            }
            RephrasedPayload::MultipleChoice { question, options, correct } => {
                let mut lines = vec![format!("Q: {question}")];
                for (i, option) in options.iter().enumerate() {
                    lines.push(format!("{}) {option}", char::from(b'A' + i as u8)));
                }
                lines.push(format!("Correct: {correct}"));
                lines.join("\n")
            }
        })
        .collect();
    blocks.join("\n\n")
}

/// Renders evidence snippets as a bulleted block.
pub fn format_snippets_block(snippets: &[&str]) -> String {
    if snippets.is_empty() {
        return "(no supporting snippets)".to_string();
    }
    snippets.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RephraseFailure {
    pub qa_id: String,
    pub format: TargetFormat,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct RephraseOutcome {
    pub accepted: Vec<RephrasedQA>,
    pub failures: Vec<RephraseFailure>,
}

impl RephraseOutcome {
    pub fn total(&self) -> usize {
        self.accepted.len() + self.failures.len()
    }
}

/// Rephrases each (record, evidence) pair into `format`. Records come back
/// in input order, split into validated records and accounted failures.
pub fn rephrase_batch<B: ChatBackend>(
    catalog: &PromptCatalog,
    gateway: &Gateway<B>,
    bank: &ExemplarBank,
    pairs: &[(&QARecord, &EvidenceBundle)],
    format: TargetFormat,
    exemplars_per_prompt: usize,
    temperature: f64,
) -> Result<RephraseOutcome, RephraseError> {
    let mut requests = Vec::with_capacity(pairs.len());
    let mut contexts = Vec::with_capacity(pairs.len());
    for (record, bundle) in pairs {
        let snippets = bundle.supporting_snippets();
        let exemplars = bank.top(&record.question, exemplars_per_prompt);
        let prompt = catalog.rephrase_prompt(
            format.stage(),
            &record.question,
            &record.answer,
            &format_snippets_block(&snippets),
            &format_exemplars_block(&exemplars),
        )?;
        requests.push(
            CompletionRequest::new(
                format!("rephrase:{}:{}", format.as_str(), record.graphlet_id),
                prompt,
            )
            .with_temperature(temperature),
        );
        contexts.push(snippets.join("\n"));
    }

    let results = gateway.complete_many(&requests);
    let mut outcome = RephraseOutcome::default();
    for (((record, _), result), context) in pairs.iter().zip(results).zip(contexts) {
        let text = result.outcome?;
        let payload = match format {
            TargetFormat::YesNo => parse_structured::<YesNoOutput>(&text).map(|out| {
                RephrasedPayload::YesNo { question: out.question, context, label: out.label }
            }),
            TargetFormat::MultipleChoice => parse_structured::<McqOutput>(&text).map(|out| {
                RephrasedPayload::MultipleChoice {
                    question: out.question,
                    options: out.options,
                    correct: out.correct,
                }
            }),
        };
        match payload {
            Ok(payload) => match validate_format(&payload) {
                Ok(()) => outcome
                    .accepted
                    .push(RephrasedQA { qa_id: record.graphlet_id.clone(), payload }),
                Err(violation) => outcome.failures.push(RephraseFailure {
                    qa_id: record.graphlet_id.clone(),
                    format,
                    reason: violation.to_string(),
                }),
            },
            Err(err) => outcome.failures.push(RephraseFailure {
                qa_id: record.graphlet_id.clone(),
                format,
                reason: format!("unparseable response: {err}"),
            }),
        }
    }
    Ok(outcome)
}

/// Failure-accounting TSV: one row per rejected rephrase.
pub fn write_failures_tsv(failures: &[RephraseFailure], path: &Path) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "qa_id\tformat\treason")?;
    for failure in failures {
        writeln!(file, "{}\t{}\t{}", failure.qa_id, failure.format, failure.reason)?;
    }
    Ok(())
}
