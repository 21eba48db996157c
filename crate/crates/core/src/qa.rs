//! QA generation and the three-stage quality funnel.
//!
//! Stage one (structural) runs at parse time: a response must contain a JSON
//! object matching the generation schema whose role fields reference real
//! graphlet nodes. Stage two culls questions or answers whose character
//! length falls outside a z-score band fitted on the parsed population.
//! Stage three asks a judge model to re-derive the answer; only pairs judged
//! valid on both counts are accepted.
//!
//! Every record keeps exactly one terminal status, so funnel counts always
//! partition the generated population; unparseable judge verdicts are
//! tracked separately from substantive rejections.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphlet::Graphlet;
use crate::llm::{
    parse_structured, ChatBackend, CompletionRequest, Gateway, GenerationOutput, JudgeOutput,
    RequestFailed,
};
use crate::prompt::{PromptCatalog, PromptConfig, PromptError};

pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;

#[derive(Debug, Error)]
pub enum QaError {
    #[error(transparent)]
    Gateway(#[from] RequestFailed),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("cannot fit length bounds: {reason}")]
    BadBoundsInput { reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Terminal per-record outcome. A record carries exactly one status; the
/// `judge_parse_failed` flag refines `JudgeRejected` without breaking the
/// partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    /// Parsed and role-validated; still in flight through later stages.
    Generated,
    /// The generation response had no usable JSON or failed role checks.
    ParseFailed,
    /// Question or answer length fell outside the fitted band.
    LengthCulled,
    /// The judge rejected the pair, or its verdict was unparseable.
    JudgeRejected,
    /// Survived all three stages.
    Accepted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QARecord {
    pub graphlet_id: String,
    pub shape_ordinal: u8,
    pub question: String,
    pub answer: String,
    pub question_nodes: Vec<String>,
    pub hidden_nodes: Vec<String>,
    pub answer_node: String,
    pub stage_status: StageStatus,
    #[serde(default)]
    pub judge_parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<JudgeOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    /// Raw model text, retained only when a stage failed to parse it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

impl QARecord {
    fn parse_failure(graphlet: &Graphlet, raw: String) -> QARecord {
        QARecord {
            graphlet_id: graphlet.graphlet_id.clone(),
            shape_ordinal: graphlet.shape_ordinal,
            question: String::new(),
            answer: String::new(),
            question_nodes: Vec::new(),
            hidden_nodes: Vec::new(),
            answer_node: String::new(),
            stage_status: StageStatus::ParseFailed,
            judge_parse_failed: false,
            verdict: None,
            reasoning: None,
            raw: Some(raw),
        }
    }

    /// Entity names shown to the judge: question nodes, hidden nodes, then
    /// the answer node.
    pub fn entity_names(&self) -> Vec<&str> {
        self.question_nodes
            .iter()
            .chain(self.hidden_nodes.iter())
            .map(String::as_str)
            .chain(std::iter::once(self.answer_node.as_str()))
            .collect()
    }
}

/// Issues one generation call per graphlet and applies the structural
/// filter. Output is one record per graphlet, in input order. A gateway
/// failure (retries exhausted) aborts the batch so the caller's previously
/// checkpointed work stays intact.
pub fn generate_batch<B: ChatBackend>(
    catalog: &PromptCatalog,
    config: &PromptConfig,
    gateway: &Gateway<B>,
    graphlets: &[Graphlet],
    temperature: f64,
) -> Result<Vec<QARecord>, QaError> {
    let mut requests = Vec::with_capacity(graphlets.len());
    for graphlet in graphlets {
        let prompt = catalog.assemble(config, graphlet)?;
        requests.push(
            CompletionRequest::new(format!("gen:{}", graphlet.graphlet_id), prompt)
                .with_temperature(temperature),
        );
    }
    let results = gateway.complete_many(&requests);
    let mut records = Vec::with_capacity(graphlets.len());
    for (graphlet, result) in graphlets.iter().zip(results) {
        let text = result.outcome?;
        let record = match parse_structured::<GenerationOutput>(&text) {
            Ok(output) => {
                let names = graphlet.node_names();
                match output.validate_roles(&names) {
                    Ok(()) => QARecord {
                        graphlet_id: graphlet.graphlet_id.clone(),
                        shape_ordinal: graphlet.shape_ordinal,
                        question: output.question,
                        answer: output.answer,
                        question_nodes: output.question_nodes,
                        hidden_nodes: output.hidden_nodes,
                        answer_node: output.answer_node,
                        stage_status: StageStatus::Generated,
                        judge_parse_failed: false,
                        verdict: None,
                        reasoning: output.reasoning,
                        raw: None,
                    },
                    Err(_) => QARecord::parse_failure(graphlet, text),
                }
            }
            Err(_) => QARecord::parse_failure(graphlet, text),
        };
        records.push(record);
    }
    Ok(records)
}

/// Per-field z-score band. Bounds are inclusive character counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    pub mean: f64,
    pub stddev: f64,
    pub lo: u64,
    pub hi: u64,
}

impl FieldBounds {
    pub fn contains(&self, len: u64) -> bool {
        (self.lo..=self.hi).contains(&len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBounds {
    pub question: FieldBounds,
    pub answer: FieldBounds,
    pub z: f64,
    /// Records the bounds were fitted on.
    pub sample_size: u64,
}

impl LengthBounds {
    pub fn save(&self, path: &Path) -> Result<(), QaError> {
        let text = serde_json::to_string_pretty(self).expect("bounds serialize");
        std::fs::write(path, text + "\n")
            .map_err(|e| QaError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, QaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QaError::Io { path: path.display().to_string(), source: e })?;
        serde_json::from_str(&text).map_err(|e| QaError::BadBoundsInput {
            reason: format!("{}: {e}", path.display()),
        })
    }
}

/// Length in Unicode scalar values, the unit for all band arithmetic.
pub fn char_len(text: &str) -> u64 {
    text.chars().count() as u64
}

/// Population mean and standard deviation from exact integer sums, then an
/// inclusive `[ceil(mean - z*sd), floor(mean + z*sd)]` band clamped to at
/// least 1. Integer accumulation makes the fit independent of record order.
fn fit_field(lengths: impl Iterator<Item = u64> + Clone, z: f64) -> FieldBounds {
    let mut n: u128 = 0;
    let mut sum: u128 = 0;
    let mut sum_sq: u128 = 0;
    for len in lengths {
        n += 1;
        sum += len as u128;
        sum_sq += (len as u128) * (len as u128);
    }
    debug_assert!(n > 0);
    let nf = n as f64;
    let mean = sum as f64 / nf;
    // Population variance via E[X^2] - E[X]^2 on exact sums.
    let variance = (sum_sq as f64 / nf - mean * mean).max(0.0);
    let stddev = variance.sqrt();
    let lo = (mean - z * stddev).ceil().max(1.0) as u64;
    let hi = (mean + z * stddev).floor().max(0.0) as u64;
    FieldBounds { mean, stddev, lo, hi }
}

/// Fits question and answer bands over records still in flight
/// (status `Generated`); parse failures carry no text and are excluded.
pub fn compute_length_bounds(records: &[QARecord], z: f64) -> Result<LengthBounds, QaError> {
    if !z.is_finite() || z < 0.0 {
        return Err(QaError::BadBoundsInput { reason: format!("z threshold {z} is invalid") });
    }
    let live: Vec<&QARecord> =
        records.iter().filter(|r| r.stage_status == StageStatus::Generated).collect();
    if live.is_empty() {
        return Err(QaError::BadBoundsInput {
            reason: "no parsed records to fit on".to_string(),
        });
    }
    Ok(LengthBounds {
        question: fit_field(live.iter().map(|r| char_len(&r.question)), z),
        answer: fit_field(live.iter().map(|r| char_len(&r.answer)), z),
        z,
        sample_size: live.len() as u64,
    })
}

/// Marks in-flight records whose question or answer length leaves the band.
/// Returns the number culled.
pub fn apply_length_filter(records: &mut [QARecord], bounds: &LengthBounds) -> u64 {
    let mut culled = 0;
    for record in records.iter_mut() {
        if record.stage_status != StageStatus::Generated {
            continue;
        }
        let ok = bounds.question.contains(char_len(&record.question))
            && bounds.answer.contains(char_len(&record.answer));
        if !ok {
            record.stage_status = StageStatus::LengthCulled;
            culled += 1;
        }
    }
    culled
}

/// Judges every in-flight record, settling each to `Accepted` or
/// `JudgeRejected`. Unparseable verdicts reject the record and set
/// `judge_parse_failed`; they are not retried.
pub fn judge_batch<B: ChatBackend>(
    catalog: &PromptCatalog,
    gateway: &Gateway<B>,
    records: &mut [QARecord],
    temperature: f64,
) -> Result<(), QaError> {
    let live: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.stage_status == StageStatus::Generated)
        .map(|(i, _)| i)
        .collect();
    let mut requests = Vec::with_capacity(live.len());
    for &i in &live {
        let record = &records[i];
        let prompt =
            catalog.judge_prompt(&record.question, &record.answer, &record.entity_names())?;
        requests.push(
            CompletionRequest::new(format!("judge:{}", record.graphlet_id), prompt)
                .with_temperature(temperature),
        );
    }
    let results = gateway.complete_many(&requests);
    for (&i, result) in live.iter().zip(results) {
        let text = result.outcome?;
        let record = &mut records[i];
        match parse_structured::<JudgeOutput>(&text) {
            Ok(verdict) => {
                record.stage_status = if verdict.accepted() {
                    StageStatus::Accepted
                } else {
                    StageStatus::JudgeRejected
                };
                record.verdict = Some(verdict);
            }
            Err(_) => {
                record.stage_status = StageStatus::JudgeRejected;
                record.judge_parse_failed = true;
                record.raw = Some(text);
            }
        }
    }
    Ok(())
}

/// Counts per funnel stage plus the acceptance ratios under both
/// denominator conventions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    /// Records that entered the funnel (one per prompted graphlet).
    pub generated: u64,
    pub parse_failed: u64,
    pub length_culled: u64,
    /// Rejections carrying a parsed verdict.
    pub judge_rejected: u64,
    /// Rejections whose verdict text was unparseable.
    pub judge_parse_failed: u64,
    pub accepted: u64,
}

impl FunnelReport {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a QARecord>) -> FunnelReport {
        let mut report = FunnelReport::default();
        for record in records {
            report.generated += 1;
            match record.stage_status {
                StageStatus::Generated => {
                    // Still in flight; shows up in no terminal bucket yet.
                }
                StageStatus::ParseFailed => report.parse_failed += 1,
                StageStatus::LengthCulled => report.length_culled += 1,
                StageStatus::JudgeRejected => {
                    if record.judge_parse_failed {
                        report.judge_parse_failed += 1;
                    } else {
                        report.judge_rejected += 1;
                    }
                }
                StageStatus::Accepted => report.accepted += 1,
            }
        }
        report
    }

    /// True when the terminal buckets exactly partition the population.
    pub fn is_conserved(&self) -> bool {
        self.parse_failed
            + self.length_culled
            + self.judge_rejected
            + self.judge_parse_failed
            + self.accepted
            == self.generated
    }

    pub fn judged(&self) -> u64 {
        self.accepted + self.judge_rejected + self.judge_parse_failed
    }

    pub fn acceptance_of_generated(&self) -> f64 {
        ratio(self.accepted, self.generated)
    }

    /// Accepted over everything that reached the judge, unparseable
    /// verdicts included in the denominator.
    pub fn acceptance_of_judged_incl_unparseable(&self) -> f64 {
        ratio(self.accepted, self.judged())
    }

    /// Accepted over substantively judged records only.
    pub fn acceptance_of_judged_excl_unparseable(&self) -> f64 {
        ratio(self.accepted, self.accepted + self.judge_rejected)
    }

    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "metric\tvalue")?;
        writeln!(file, "generated\t{}", self.generated)?;
        writeln!(file, "parse_failed\t{}", self.parse_failed)?;
        writeln!(file, "length_culled\t{}", self.length_culled)?;
        writeln!(file, "judge_rejected\t{}", self.judge_rejected)?;
        writeln!(file, "judge_parse_failed\t{}", self.judge_parse_failed)?;
        writeln!(file, "accepted\t{}", self.accepted)?;
        writeln!(file, "accepted_per_generated\t{:.6}", self.acceptance_of_generated())?;
        writeln!(
            file,
            "accepted_per_judged_incl_unparseable\t{:.6}",
            self.acceptance_of_judged_incl_unparseable()
        )?;
        writeln!(
            file,
            "accepted_per_judged_excl_unparseable\t{:.6}",
            self.acceptance_of_judged_excl_unparseable()
        )?;
        Ok(())
    }
}

fn ratio(numerator: u64, denominator: u64) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Funnel broken down by graphlet shape, for stage statistics.
pub fn funnel_by_shape<'a>(
    records: impl IntoIterator<Item = &'a QARecord>,
) -> BTreeMap<u8, FunnelReport> {
    let mut by_shape: BTreeMap<u8, Vec<&QARecord>> = BTreeMap::new();
    for record in records {
        by_shape.entry(record.shape_ordinal).or_default().push(record);
    }
    by_shape
        .into_iter()
        .map(|(ordinal, records)| (ordinal, FunnelReport::from_records(records)))
        .collect()
}
