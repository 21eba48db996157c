//! Evidence retrieval: BM25 candidate search plus model-assessed relevance
//! with byte-verified snippets.
//!
//! For each accepted QA pair the query is `question + " " + answer`; the
//! top-ranked documents are shown to the model one at a time. Snippets the
//! model returns are kept only when they occur verbatim (byte-for-byte) in
//! the source abstract; a "relevant" assessment whose snippets all fail that
//! check is downgraded to not relevant. Irrelevant assessments never carry
//! snippets.

pub mod bm25;

pub use bm25::{
    analyze, Bm25Index, Document, ScoredDoc, ANALYZER_VERSION, DEFAULT_B, DEFAULT_K1,
    DEFAULT_TOP_K,
};

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{
    parse_structured, ChatBackend, CompletionRequest, EvidenceOutput, Gateway, RequestFailed,
};
use crate::prompt::{PromptCatalog, PromptError};
use crate::qa::QARecord;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus contains no documents")]
    EmptyCorpus,
    #[error("duplicate document id {doc_id:?}")]
    DuplicateDocId { doc_id: String },
    #[error("unknown document id {doc_id:?}")]
    UnknownDoc { doc_id: String },
    #[error("index checksum mismatch in {file}")]
    ChecksumMismatch { file: String },
    #[error("corrupt index: {message}")]
    Corrupt { message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gateway(#[from] RequestFailed),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Model assessment of one candidate document after verbatim verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceAssessment {
    pub doc_id: String,
    pub relevant: bool,
    /// Snippets verified to occur byte-for-byte in the abstract.
    pub snippets: Vec<String>,
    /// Snippets discarded because they were not exact substrings.
    pub dropped_snippets: u32,
    /// True when a relevant claim lost all its snippets and was downgraded.
    pub downgraded: bool,
    /// True when the assessment response was unparseable (treated as not
    /// relevant, never retried).
    pub parse_failed: bool,
}

/// All retrieval evidence for one accepted QA pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    /// Graphlet id of the QA record this bundle belongs to.
    pub qa_id: String,
    /// BM25 candidates, descending score (doc id breaks ties).
    pub candidates: Vec<BundleCandidate>,
    pub assessments: Vec<EvidenceAssessment>,
    pub relevant_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleCandidate {
    pub doc_id: String,
    pub score: f64,
}

impl EvidenceBundle {
    /// Verified snippets across all relevant assessments, in candidate
    /// rank order.
    pub fn supporting_snippets(&self) -> Vec<&str> {
        self.assessments
            .iter()
            .filter(|a| a.relevant)
            .flat_map(|a| a.snippets.iter().map(String::as_str))
            .collect()
    }
}

/// The retrieval query for a QA record.
pub fn evidence_query(record: &QARecord) -> String {
    format!("{} {}", record.question, record.answer)
}

/// Enforces the verbatim-snippet contract on one parsed assessment.
pub fn verify_assessment(doc: &Document, output: &EvidenceOutput) -> EvidenceAssessment {
    if !output.relevant {
        return EvidenceAssessment {
            doc_id: doc.doc_id.clone(),
            relevant: false,
            snippets: Vec::new(),
            dropped_snippets: 0,
            downgraded: false,
            parse_failed: false,
        };
    }
    let mut kept = Vec::new();
    let mut dropped = 0u32;
    for snippet in &output.snippets {
        if doc.abstract_text.contains(snippet.as_str()) {
            kept.push(snippet.clone());
        } else {
            dropped += 1;
            log::warn!(
                "dropping non-verbatim snippet for doc {}: {:?}",
                doc.doc_id,
                truncate_for_log(snippet)
            );
        }
    }
    let downgraded = kept.is_empty();
    if downgraded {
        log::warn!("downgrading doc {}: no verifiable snippets survived", doc.doc_id);
    }
    EvidenceAssessment {
        doc_id: doc.doc_id.clone(),
        relevant: !downgraded,
        snippets: kept,
        dropped_snippets: dropped,
        downgraded,
        parse_failed: false,
    }
}

fn truncate_for_log(text: &str) -> String {
    text.chars().take(60).collect()
}

/// Retrieves candidates and collects assessed evidence for each record, one
/// bundle per record in input order. Assessment calls for every
/// (record, candidate) pair run through the gateway as a single batch.
pub fn build_bundles<B: ChatBackend>(
    catalog: &PromptCatalog,
    gateway: &Gateway<B>,
    index: &Bm25Index,
    documents: &[Document],
    records: &[QARecord],
    top_k: usize,
    temperature: f64,
) -> Result<Vec<EvidenceBundle>, RetrievalError> {
    let by_id: HashMap<&str, &Document> =
        documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut bundles: Vec<EvidenceBundle> = Vec::with_capacity(records.len());
    let mut requests = Vec::new();
    // (bundle index, document) for each request, in request order.
    let mut targets: Vec<(usize, &Document)> = Vec::new();

    for (bundle_index, record) in records.iter().enumerate() {
        let hits = index.retrieve(&evidence_query(record), top_k);
        let mut candidates = Vec::with_capacity(hits.len());
        for hit in &hits {
            let doc = *by_id
                .get(hit.doc_id.as_str())
                .ok_or_else(|| RetrievalError::UnknownDoc { doc_id: hit.doc_id.clone() })?;
            let prompt = catalog.evidence_prompt(
                &record.question,
                &record.answer,
                &doc.title,
                &doc.abstract_text,
            )?;
            requests.push(
                CompletionRequest::new(
                    format!("evidence:{}:{}", record.graphlet_id, doc.doc_id),
                    prompt,
                )
                .with_temperature(temperature),
            );
            targets.push((bundle_index, doc));
            candidates.push(BundleCandidate { doc_id: hit.doc_id.clone(), score: hit.score });
        }
        bundles.push(EvidenceBundle {
            qa_id: record.graphlet_id.clone(),
            candidates,
            assessments: Vec::new(),
            relevant_count: 0,
        });
    }

    let results = gateway.complete_many(&requests);
    for ((bundle_index, doc), result) in targets.into_iter().zip(results) {
        let text = result.outcome?;
        let assessment = match parse_structured::<EvidenceOutput>(&text) {
            Ok(output) => verify_assessment(doc, &output),
            Err(_) => EvidenceAssessment {
                doc_id: doc.doc_id.clone(),
                relevant: false,
                snippets: Vec::new(),
                dropped_snippets: 0,
                downgraded: false,
                parse_failed: true,
            },
        };
        bundles[bundle_index].assessments.push(assessment);
    }
    for bundle in &mut bundles {
        bundle.relevant_count = bundle.assessments.iter().filter(|a| a.relevant).count() as u32;
    }
    Ok(bundles)
}

/// Distribution of relevant-document counts across bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleStats {
    pub bundles: u64,
    /// relevant_count -> number of bundles.
    pub histogram: BTreeMap<u32, u64>,
    pub frac_zero_relevant: f64,
    pub frac_at_least_two: f64,
    pub frac_at_least_five: f64,
}

pub fn bundle_stats(bundles: &[EvidenceBundle]) -> BundleStats {
    let mut histogram: BTreeMap<u32, u64> = BTreeMap::new();
    for bundle in bundles {
        *histogram.entry(bundle.relevant_count).or_insert(0) += 1;
    }
    let total = bundles.len() as u64;
    let count_where = |pred: &dyn Fn(u32) -> bool| {
        histogram.iter().filter(|(k, _)| pred(**k)).map(|(_, v)| v).sum::<u64>()
    };
    let frac = |n: u64| if total == 0 { 0.0 } else { n as f64 / total as f64 };
    BundleStats {
        bundles: total,
        frac_zero_relevant: frac(count_where(&|k| k == 0)),
        frac_at_least_two: frac(count_where(&|k| k >= 2)),
        frac_at_least_five: frac(count_where(&|k| k >= 5)),
        histogram,
    }
}

impl BundleStats {
    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "metric\tvalue")?;
        writeln!(file, "bundles\t{}", self.bundles)?;
        for (count, bundles) in &self.histogram {
            writeln!(file, "relevant_{count}\t{bundles}")?;
        }
        writeln!(file, "frac_zero_relevant\t{:.6}", self.frac_zero_relevant)?;
        writeln!(file, "frac_at_least_two\t{:.6}", self.frac_at_least_two)?;
        writeln!(file, "frac_at_least_five\t{:.6}", self.frac_at_least_five)?;
        Ok(())
    }
}
