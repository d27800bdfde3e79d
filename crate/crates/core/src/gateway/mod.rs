//! Model-agnostic completion gateway with retry, bounded concurrency, and
//! record/replay transcripts.
//!
//! The pipeline never talks to a model vendor directly. Every request goes
//! through a [`CompletionGateway`], which runs in one of three modes:
//!
//! * **Live**: forward to the configured HTTP endpoint.
//! * **Record**: live, but persist each `(transcript key -> response)`
//!   pair to a transcript store; a stored key is served from the store
//!   without a network call.
//! * **Replay**: serve exclusively from the store; a missing key is a
//!   [`GatewayError::ReplayMiss`].
//!
//! Transcript keys are a stable hash of `(prompt text, strategy)`, so two
//! pipeline runs over the same corpus and store produce identical results.

mod http;
mod transcript;

pub use http::{EndpointConfig, HttpTransport, Transport, TransportFault};
pub use transcript::{TranscriptEntry, TranscriptStore};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("replay miss: no transcript entry for key {key}")]
    ReplayMiss { key: String },
    #[error("request budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("invalid retry policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid prompt request: {0}")]
    InvalidRequest(String),
    #[error("transcript store error: {0}")]
    Store(String),
}

/// Which prompt family a request belongs to; part of the transcript key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Direct,
    Reverse,
    Generate,
}

impl PromptKind {
    pub fn tag(self) -> &'static str {
        match self {
            PromptKind::Direct => "direct",
            PromptKind::Reverse => "reverse",
            PromptKind::Generate => "generate",
        }
    }
}

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

/// A rendered prompt, ready for completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub text: String,
    pub strategy: PromptKind,
    pub temperature: f64,
    pub max_output: u32,
    /// Stable hash of `(text, strategy)`; the transcript store key.
    pub transcript_key: String,
}

impl PromptRequest {
    /// Grading requests default to temperature 0 for repeatability.
    pub fn new(text: impl Into<String>, strategy: PromptKind) -> Result<Self, GatewayError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt text".into()));
        }
        let transcript_key = transcript_key(&text, strategy);
        Ok(PromptRequest {
            text,
            strategy,
            temperature: DEFAULT_TEMPERATURE,
            max_output: DEFAULT_MAX_OUTPUT_TOKENS,
            transcript_key,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, GatewayError> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn with_max_output(mut self, max_output: u32) -> Self {
        self.max_output = max_output;
        self
    }
}

/// Stable key: identical prompt text and strategy always map here.
pub fn transcript_key(text: &str, strategy: PromptKind) -> String {
    let mut hasher = Sha256::new();
    hasher.update(strategy.tag().as_bytes());
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub latency_ms: u64,
    /// 1-based attempt number the response was obtained on.
    pub attempt: u32,
    pub source: ResponseSource,
}

/// Exponential backoff retry policy for transient transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 200,
            max_delay_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_attempts < 1 {
            return Err(GatewayError::InvalidPolicy(
                "max_attempts must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Delay before the given (1-based) attempt; no delay before the first.
    fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let exp = attempt.saturating_sub(2).min(20);
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << exp)
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Anything that can answer prompts. Implementations must be shareable
/// across grading workers.
pub trait CompletionGateway: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<ModelResponse, GatewayError>;
}

impl<G: CompletionGateway + ?Sized> CompletionGateway for &G {
    fn complete(&self, request: &PromptRequest) -> Result<ModelResponse, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: CompletionGateway + ?Sized> CompletionGateway for std::sync::Arc<G> {
    fn complete(&self, request: &PromptRequest) -> Result<ModelResponse, GatewayError> {
        (**self).complete(request)
    }
}

enum Mode {
    Live,
    Record(TranscriptStore),
    Replay(TranscriptStore),
}

/// The production gateway: live HTTP transport plus transcript handling.
pub struct Gateway {
    mode: Mode,
    transport: Option<Box<dyn Transport>>,
    retry: RetryPolicy,
    limiter: Limiter,
    budget: Option<Budget>,
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

impl Gateway {
    pub fn replay(store: TranscriptStore) -> Self {
        Self::build(Mode::Replay(store), None)
    }

    pub fn live(transport: impl Transport + 'static) -> Self {
        Self::build(Mode::Live, Some(Box::new(transport)))
    }

    pub fn record(transport: impl Transport + 'static, store: TranscriptStore) -> Self {
        Self::build(Mode::Record(store), Some(Box::new(transport)))
    }

    fn build(mode: Mode, transport: Option<Box<dyn Transport>>) -> Self {
        Gateway {
            mode,
            transport,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(DEFAULT_MAX_IN_FLIGHT),
            budget: None,
        }
    }

    /// Configure the retry policy for transient transport failures.
    pub fn with_retry(mut self, policy: RetryPolicy) -> Result<Self, GatewayError> {
        policy.validate()?;
        self.retry = policy;
        Ok(self)
    }

    /// Cap concurrent in-flight live requests.
    pub fn with_in_flight_limit(mut self, limit: usize) -> Self {
        self.limiter = Limiter::new(limit.max(1));
        self
    }

    /// Cap the total number of live requests this gateway may issue.
    /// Replayed responses do not count against the budget.
    pub fn with_request_budget(mut self, limit: u64) -> Self {
        self.budget = Some(Budget {
            limit,
            used: AtomicU64::new(0),
        });
        self
    }

    fn replay_from(
        store: &TranscriptStore,
        request: &PromptRequest,
    ) -> Result<Option<ModelResponse>, GatewayError> {
        match store.get(&request.transcript_key)? {
            Some(entry) => Ok(Some(ModelResponse {
                text: entry.response,
                latency_ms: 0,
                attempt: 1,
                source: ResponseSource::Replay,
            })),
            None => Ok(None),
        }
    }

    fn call_live(&self, request: &PromptRequest) -> Result<ModelResponse, GatewayError> {
        let transport = self.transport.as_deref().ok_or_else(|| {
            GatewayError::InvalidRequest("gateway has no transport configured".into())
        })?;
        if let Some(budget) = &self.budget {
            let used = budget.used.fetch_add(1, Ordering::SeqCst);
            if used >= budget.limit {
                return Err(GatewayError::BudgetExceeded {
                    limit: budget.limit,
                });
            }
        }
        let _permit = self.limiter.acquire();
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            std::thread::sleep(self.retry.delay_before(attempt));
            match transport.send(request) {
                Ok(text) => {
                    return Ok(ModelResponse {
                        text,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempt,
                        source: ResponseSource::Live,
                    });
                }
                Err(fault) => {
                    let exhausted = attempt >= self.retry.max_attempts;
                    if !fault.transient || exhausted {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            detail: fault.detail,
                        });
                    }
                    log::debug!(
                        "transient transport fault on attempt {attempt}: {}; retrying",
                        fault.detail
                    );
                }
            }
        }
    }
}

impl CompletionGateway for Gateway {
    fn complete(&self, request: &PromptRequest) -> Result<ModelResponse, GatewayError> {
        match &self.mode {
            Mode::Replay(store) => {
                Self::replay_from(store, request)?.ok_or_else(|| GatewayError::ReplayMiss {
                    key: request.transcript_key.clone(),
                })
            }
            Mode::Record(store) => {
                if let Some(hit) = Self::replay_from(store, request)? {
                    return Ok(hit);
                }
                let response = self.call_live(request)?;
                store.put(&TranscriptEntry {
                    key: request.transcript_key.clone(),
                    strategy: request.strategy,
                    response: response.text.clone(),
                })?;
                Ok(response)
            }
            Mode::Live => self.call_live(request),
        }
    }
}

struct Budget {
    limit: u64,
    used: AtomicU64,
}

/// Counting semaphore bounding in-flight live requests.
struct Limiter {
    max: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

struct LimiterPermit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Limiter {
            max,
            state: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterPermit<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.max {
            in_flight = self.cv.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        LimiterPermit(self)
    }
}

impl Drop for LimiterPermit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.0.state.lock().unwrap();
        *in_flight -= 1;
        self.0.cv.notify_one();
    }
}

/// Wrapper that records every request passing through; used to assert the
/// unit-test gate produces zero model traffic for passing submissions.
pub struct CountingGateway<G> {
    inner: G,
    seen: Mutex<Vec<PromptRequest>>,
}

impl<G: CompletionGateway> CountingGateway<G> {
    pub fn new(inner: G) -> Self {
        CountingGateway {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<PromptRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn total_calls(&self) -> usize {
        self.seen.lock().unwrap().len()
    }

    /// Number of recorded requests whose prompt text contains `needle`.
    pub fn calls_containing(&self, needle: &str) -> usize {
        self.seen
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.text.contains(needle))
            .count()
    }
}

impl<G: CompletionGateway> CompletionGateway for CountingGateway<G> {
    fn complete(&self, request: &PromptRequest) -> Result<ModelResponse, GatewayError> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}
