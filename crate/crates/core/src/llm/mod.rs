//! Chat-completion access for every model-facing stage.
//!
//! A [`ChatBackend`] turns one prompt into one response; [`HttpBackend`]
//! speaks the common chat-completions wire shape and [`MockBackend`] runs
//! deterministic offline simulations. The [`Gateway`] layers bounded
//! concurrency, retry with exponential backoff, and an append-only audit
//! log on top, and always returns results in input order so downstream
//! checkpoints are reproducible.

pub mod http;
pub mod mock;
pub mod parse;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{MockBackend, MockKnobs};
pub use parse::{
    extract_json_object, parse_structured, EvidenceOutput, GenerationOutput, JudgeOutput,
    McqOutput, ParseError, YesNoOutput,
};

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.6;

#[derive(Debug, Error)]
pub enum BackendError {
    /// Transient failure: rate limit, server error, transport problem.
    #[error("retryable: {message}")]
    Retryable { message: String },
    /// Permanent failure for this request: bad request, auth, malformed reply.
    #[error("non-retryable: {message}")]
    NonRetryable { message: String },
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub request_id: String,
    pub prompt: String,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(request_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        CompletionRequest {
            request_id: request_id.into(),
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
    fn name(&self) -> &str;
}

/// Terminal failure of one request after retries were exhausted or a
/// non-retryable error occurred.
#[derive(Debug, Clone, Error)]
#[error("request {request_id} failed after {attempts} attempt(s): {message}")]
pub struct RequestFailed {
    pub request_id: String,
    pub attempts: u32,
    pub message: String,
}

#[derive(Debug)]
pub struct CompletionResult {
    pub request_id: String,
    /// Retries actually performed (0 when the first attempt settled it).
    pub retries: u32,
    /// Wall time across all attempts, including backoff sleeps.
    pub latency_ms: u64,
    pub outcome: Result<String, RequestFailed>,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Upper bound on simultaneously outstanding requests.
    pub max_in_flight: usize,
    /// Retries after the initial attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles per retry up to `max_delay_ms`.
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { max_in_flight: 4, max_retries: 3, base_delay_ms: 250, max_delay_ms: 4_000 }
    }
}

#[derive(Debug, Serialize)]
struct AuditRecord<'a> {
    request_id: &'a str,
    prompt_sha256: String,
    status: &'a str,
    retries: u32,
    latency_ms: u64,
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Gateway<B: ChatBackend> {
    backend: B,
    config: GatewayConfig,
    audit: Option<Mutex<std::fs::File>>,
}

impl<B: ChatBackend> Gateway<B> {
    pub fn new(backend: B, config: GatewayConfig) -> Self {
        Gateway { backend, config, audit: None }
    }

    /// Appends one audit line per settled request to `path`.
    pub fn with_audit_log(mut self, path: &std::path::Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        self.audit = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.config.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(exp.min(self.config.max_delay_ms))
    }

    fn audit(&self, record: &AuditRecord<'_>) {
        if let Some(sink) = &self.audit {
            let line = serde_json::to_string(record).expect("audit record serializes");
            let mut file = sink.lock().expect("audit lock");
            // Audit failures must not take down the run.
            let _ = writeln!(file, "{line}");
        }
    }

    /// Runs one request to a terminal outcome, retrying transient failures.
    pub fn complete_one(&self, request: &CompletionRequest) -> CompletionResult {
        let start = Instant::now();
        let mut attempt = 0u32;
        let outcome = loop {
            match self.backend.complete(request) {
                Ok(text) => break Ok(text),
                Err(BackendError::Retryable { message }) => {
                    if attempt >= self.config.max_retries {
                        break Err(RequestFailed {
                            request_id: request.request_id.clone(),
                            attempts: attempt + 1,
                            message,
                        });
                    }
                    std::thread::sleep(self.backoff(attempt));
                    attempt += 1;
                }
                Err(BackendError::NonRetryable { message }) => {
                    break Err(RequestFailed {
                        request_id: request.request_id.clone(),
                        attempts: attempt + 1,
                        message,
                    });
                }
            }
        };
        let latency_ms = start.elapsed().as_millis() as u64;
        self.audit(&AuditRecord {
            request_id: &request.request_id,
            prompt_sha256: sha256_hex(&request.prompt),
            status: if outcome.is_ok() { "ok" } else { "failed" },
            retries: attempt,
            latency_ms,
        });
        CompletionResult {
            request_id: request.request_id.clone(),
            retries: attempt,
            latency_ms,
            outcome,
        }
    }

    /// Runs a batch with at most `max_in_flight` requests outstanding.
    /// Results come back in input order regardless of completion order.
    pub fn complete_many(&self, requests: &[CompletionRequest]) -> Vec<CompletionResult> {
        let n = requests.len();
        if n == 0 {
            return Vec::new();
        }
        let slots: Vec<Mutex<Option<CompletionResult>>> =
            (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.max_in_flight.clamp(1, n);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let result = self.complete_one(&requests[i]);
                    *slots[i].lock().expect("result slot") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().expect("slot lock").expect("worker filled slot"))
            .collect()
    }
}

/// Wrapper that records the peak number of concurrent `complete` calls.
/// Useful for asserting the gateway's in-flight bound.
pub struct InstrumentedBackend<B: ChatBackend> {
    inner: B,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    delay: Duration,
}

impl<B: ChatBackend> InstrumentedBackend<B> {
    pub fn new(inner: B, delay: Duration) -> Self {
        InstrumentedBackend {
            inner,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            delay,
        }
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for InstrumentedBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(current, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let result = self.inner.complete(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}
