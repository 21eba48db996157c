//! BM25 index over the document corpus.
//!
//! Analysis is lowercasing plus splitting on non-alphanumeric scalars; no
//! stemming, no stopwords. Indexed text is `title + " " + abstract`. Scores
//! use idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)) with the standard tf
//! saturation; the query is analyzed with the same pipeline and scored as a
//! token multiset, so a repeated query token contributes twice.
//!
//! The on-disk form is two little-endian binary files plus a JSON manifest
//! carrying their SHA-256 checksums. Builds are fully deterministic: the
//! same corpus yields byte-identical index files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;

pub const ANALYZER_VERSION: &str = "unicode-alnum-lower-v1";
pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 10;

const LENGTHS_MAGIC: &[u8; 8] = b"QRYLEN01";
const POSTINGS_MAGIC: &[u8; 8] = b"QRYPST01";

/// One corpus document. The indexed text is the title and abstract joined
/// by a single space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

impl Document {
    pub fn indexed_text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

/// Lowercased tokens split on every non-alphanumeric scalar.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct DocEntry {
    doc_id: String,
    token_len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexManifest {
    analyzer_version: String,
    k1: f64,
    b: f64,
    doc_count: u64,
    term_count: u64,
    lengths_sha256: String,
    postings_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    docs: Vec<DocEntry>,
    /// term -> [(doc index, term frequency)], doc indices ascending.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build(documents: &[Document]) -> Result<Self, RetrievalError> {
        Self::build_with(documents, DEFAULT_K1, DEFAULT_B)
    }

    pub fn build_with(documents: &[Document], k1: f64, b: f64) -> Result<Self, RetrievalError> {
        if documents.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut sorted: Vec<&Document> = documents.iter().collect();
        sorted.sort_by(|x, y| x.doc_id.cmp(&y.doc_id));
        for pair in sorted.windows(2) {
            if pair[0].doc_id == pair[1].doc_id {
                return Err(RetrievalError::DuplicateDocId { doc_id: pair[0].doc_id.clone() });
            }
        }
        let mut docs = Vec::with_capacity(sorted.len());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (index, doc) in sorted.iter().enumerate() {
            let tokens = analyze(&doc.indexed_text());
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for token in &tokens {
                *counts.entry(token.clone()).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push((index as u32, tf));
            }
            docs.push(DocEntry { doc_id: doc.doc_id.clone(), token_len: tokens.len() as u32 });
        }
        let avg_len = average_len(&docs);
        Ok(Bm25Index { docs, postings, avg_len, k1, b })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    /// Doc ids in index order (ascending).
    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.doc_id.as_str())
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        (1.0 + (n - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
    }

    /// BM25 score of one document for an analyzed query token multiset.
    fn score_tokens(&self, doc_index: usize, tokens: &[String]) -> f64 {
        let entry = &self.docs[doc_index];
        let mut score = 0.0;
        for token in tokens {
            let Some(postings) = self.postings.get(token) else { continue };
            let Ok(pos) = postings.binary_search_by_key(&(doc_index as u32), |&(d, _)| d) else {
                continue;
            };
            let tf = postings[pos].1 as f64;
            let idf = self.idf(postings.len());
            let len_norm = 1.0 - self.b + self.b * entry.token_len as f64 / self.avg_len;
            score += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * len_norm);
        }
        score
    }

    /// Scores a raw query against one document (0 when they share no term).
    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64, RetrievalError> {
        let doc_index = self
            .docs
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .map_err(|_| RetrievalError::UnknownDoc { doc_id: doc_id.to_string() })?;
        Ok(self.score_tokens(doc_index, &analyze(query)))
    }

    /// Top `k` documents sharing at least one term with the query, ordered
    /// by descending score with ascending doc id breaking ties.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<ScoredDoc> {
        let tokens = analyze(query);
        let mut candidates: Vec<u32> = Vec::new();
        for token in &tokens {
            if let Some(postings) = self.postings.get(token) {
                candidates.extend(postings.iter().map(|&(d, _)| d));
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        let mut scored: Vec<ScoredDoc> = candidates
            .into_iter()
            .map(|d| ScoredDoc {
                doc_id: self.docs[d as usize].doc_id.clone(),
                score: self.score_tokens(d as usize, &tokens),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        scored.truncate(k);
        scored
    }

    /// Writes `lengths.bin`, `postings.bin`, and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut lengths = Vec::new();
        lengths.extend_from_slice(LENGTHS_MAGIC);
        lengths.extend_from_slice(&(self.docs.len() as u32).to_le_bytes());
        for doc in &self.docs {
            write_str(&mut lengths, &doc.doc_id);
            lengths.extend_from_slice(&doc.token_len.to_le_bytes());
        }

        let mut postings = Vec::new();
        postings.extend_from_slice(POSTINGS_MAGIC);
        postings.extend_from_slice(&(self.postings.len() as u32).to_le_bytes());
        for (term, entries) in &self.postings {
            write_str(&mut postings, term);
            postings.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for &(doc, tf) in entries {
                postings.extend_from_slice(&doc.to_le_bytes());
                postings.extend_from_slice(&tf.to_le_bytes());
            }
        }

        let lengths_path = dir.join("lengths.bin");
        let postings_path = dir.join("postings.bin");
        std::fs::write(&lengths_path, &lengths).map_err(|e| io_err(&lengths_path, e))?;
        std::fs::write(&postings_path, &postings).map_err(|e| io_err(&postings_path, e))?;

        let manifest = IndexManifest {
            analyzer_version: ANALYZER_VERSION.to_string(),
            k1: self.k1,
            b: self.b,
            doc_count: self.docs.len() as u64,
            term_count: self.postings.len() as u64,
            lengths_sha256: sha256_bytes(&lengths),
            postings_sha256: sha256_bytes(&postings),
        };
        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, text + "\n").map_err(|e| io_err(&manifest_path, e))?;
        Ok(())
    }

    /// Loads an index written by [`Bm25Index::save`], verifying checksums
    /// and the analyzer version.
    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let manifest_path = dir.join("manifest.json");
        let text =
            std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let manifest: IndexManifest =
            serde_json::from_str(&text).map_err(|e| RetrievalError::Corrupt {
                message: format!("{}: {e}", manifest_path.display()),
            })?;
        if manifest.analyzer_version != ANALYZER_VERSION {
            return Err(RetrievalError::Corrupt {
                message: format!(
                    "index analyzer {:?} does not match this build ({ANALYZER_VERSION:?})",
                    manifest.analyzer_version
                ),
            });
        }

        let lengths_path = dir.join("lengths.bin");
        let lengths = std::fs::read(&lengths_path).map_err(|e| io_err(&lengths_path, e))?;
        if sha256_bytes(&lengths) != manifest.lengths_sha256 {
            return Err(RetrievalError::ChecksumMismatch { file: "lengths.bin".to_string() });
        }
        let postings_path = dir.join("postings.bin");
        let postings_bytes =
            std::fs::read(&postings_path).map_err(|e| io_err(&postings_path, e))?;
        if sha256_bytes(&postings_bytes) != manifest.postings_sha256 {
            return Err(RetrievalError::ChecksumMismatch { file: "postings.bin".to_string() });
        }

        let mut cursor = Reader::new(&lengths, "lengths.bin");
        cursor.expect_magic(LENGTHS_MAGIC)?;
        let doc_count = cursor.read_u32()? as usize;
        let mut docs = Vec::with_capacity(doc_count);
        for _ in 0..doc_count {
            let doc_id = cursor.read_string()?;
            let token_len = cursor.read_u32()?;
            docs.push(DocEntry { doc_id, token_len });
        }
        cursor.expect_end()?;

        let mut cursor = Reader::new(&postings_bytes, "postings.bin");
        cursor.expect_magic(POSTINGS_MAGIC)?;
        let term_count = cursor.read_u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..term_count {
            let term = cursor.read_string()?;
            let entry_count = cursor.read_u32()? as usize;
            let mut entries = Vec::with_capacity(entry_count);
            for _ in 0..entry_count {
                let doc = cursor.read_u32()?;
                let tf = cursor.read_u32()?;
                if doc as usize >= docs.len() {
                    return Err(RetrievalError::Corrupt {
                        message: format!("postings reference missing document index {doc}"),
                    });
                }
                entries.push((doc, tf));
            }
            postings.insert(term, entries);
        }
        cursor.expect_end()?;

        let avg_len = average_len(&docs);
        Ok(Bm25Index { docs, postings, avg_len, k1: manifest.k1, b: manifest.b })
    }
}

fn average_len(docs: &[DocEntry]) -> f64 {
    let total: u64 = docs.iter().map(|d| d.token_len as u64).sum();
    total as f64 / docs.len() as f64
}

fn io_err(path: &Path, source: std::io::Error) -> RetrievalError {
    RetrievalError::Io { path: path.display().to_string(), source }
}

fn sha256_bytes(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Bounds-checked little-endian reader over one index file.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], file: &'a str) -> Self {
        Reader { bytes, pos: 0, file }
    }

    fn corrupt(&self, what: &str) -> RetrievalError {
        RetrievalError::Corrupt { message: format!("{}: {what} at offset {}", self.file, self.pos) }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrievalError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.corrupt("unexpected end of file"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<(), RetrievalError> {
        if self.take(8)? != magic {
            return Err(self.corrupt("bad file magic"));
        }
        Ok(())
    }

    fn read_u32(&mut self) -> Result<u32, RetrievalError> {
        let bytes = self.take(4)?;
        Ok(u32::from_le_bytes(bytes.try_into().expect("4 bytes")))
    }

    fn read_string(&mut self) -> Result<String, RetrievalError> {
        let len = self.read_u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("invalid utf-8"))
    }

    fn expect_end(&mut self) -> Result<(), RetrievalError> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt("trailing bytes"));
        }
        Ok(())
    }
}
