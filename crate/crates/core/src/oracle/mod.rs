//! Endpoint abstraction shared by enrollment and auditing.
//!
//! An [`OracleHandle`] wraps one backend (live HTTP, scripted simulator,
//! mixed router or cassette replay) with retries, token accounting,
//! transcript logging and optional cassette recording.

mod cassette;
mod http;
mod mixed;
mod scripted;
mod world;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;

pub use cassette::{load_cassette, CassetteRecorder, ReplayBackend, CASSETTE_SCHEMA_VERSION};
pub use http::{HttpBackend, HttpEndpoint};
pub use mixed::{MixedBackend, MixedRoutingPolicy};
pub use world::{ScriptedWorld, WorldFact};
pub use scripted::{
    perturb_to_mismatch, ResponseStyle, ScriptedAnswer, ScriptedBackend, ScriptedEndpoint,
    DOMAIN_LINE_PREFIX, REFUSAL_TEXT,
};

/// System prompt for every recall and generation request.
pub const RECALL_SYSTEM_PROMPT: &str =
    "Follow the user's instructions exactly. Output only what is requested.";

static NETWORK_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Number of HTTP requests issued by this process so far.
pub fn network_request_count() -> u64 {
    NETWORK_REQUESTS.load(Ordering::SeqCst)
}

pub(crate) fn note_network_request() {
    NETWORK_REQUESTS.fetch_add(1, Ordering::SeqCst);
}

/// Request-side configuration sent with every query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub system_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Provider-specific request fields merged into the request body.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl EndpointConfig {
    /// Canonical audit configuration: deterministic decoding.
    pub fn audit() -> Self {
        Self {
            system_prompt: RECALL_SYSTEM_PROMPT.to_string(),
            temperature: 0.0,
            max_output_tokens: 1024,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_temperature(&self, temperature: f64) -> Self {
        Self {
            temperature,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(OracleError::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(OracleError::InvalidConfig("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Copy with secret-looking `extra` entries replaced. Hashing and
    /// recording always see the redacted form.
    pub fn redacted(&self) -> Self {
        let mut out = self.clone();
        for (k, v) in out.extra.iter_mut() {
            if is_secret_key(k) {
                *v = serde_json::Value::String("[redacted]".into());
            }
        }
        out
    }
}

fn is_secret_key(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    ["key", "token", "secret", "authorization", "password", "bearer"]
        .iter()
        .any(|s| k.contains(s))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Rough count for backends that do not report usage.
    pub fn estimate(prompt: &str, completion: &str) -> Self {
        Self {
            prompt_tokens: prompt.chars().count().div_ceil(4) as u64,
            completion_tokens: completion.chars().count().div_ceil(4) as u64,
        }
    }

    fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishStatus {
    Stop,
    Length,
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub text: String,
    pub finish: FinishStatus,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("token budget exhausted ({used} of {limit} tokens used)")]
    BudgetExceeded { used: u64, limit: u64 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    TransportFailure { attempts: u32, message: String },
    #[error("request refused (status {status}): {message}")]
    RefusedByPolicy { status: u16, message: String },
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("invalid endpoint configuration: {0}")]
    InvalidConfig(String),
    #[error("cassette error: {0}")]
    Cassette(String),
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptError {
    #[error("transport: {message}")]
    Transport { message: String },
    #[error("refused (status {status}): {message}")]
    Refused { status: u16, message: String },
    #[error("replay miss: {key}")]
    ReplayMiss { key: String },
}

/// Per-attempt request identity handed to backends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestContext {
    /// Hex content hash of `(identity, prompt, config, attempt)`.
    pub key: String,
    pub attempt: u32,
    /// Hash of `(identity, prompt, config)` without the attempt index.
    pub base_key: String,
}

impl RequestContext {
    /// First 8 bytes of the content hash, for seeding per-request streams.
    pub fn key_u64(&self) -> u64 {
        u64::from_str_radix(&self.key[..16], 16).expect("hex key")
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        prompt: &str,
        config: &EndpointConfig,
        ctx: &RequestContext,
    ) -> Result<OracleResponse, AttemptError>;

    /// Backends that talk to a real network service back off between
    /// retries; simulators and replays never sleep.
    fn sleeps_between_retries(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 1000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn single_attempt() -> Self {
        Self {
            max_attempts: 1,
            ..Self::default()
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Http,
    Scripted,
    Mixed,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRequest {
    pub identity: String,
    pub prompt: String,
    pub config: EndpointConfig,
    pub timestamp: String,
}

/// One attempt against an endpoint, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub key: String,
    pub attempt: u32,
    pub request: TranscriptRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<OracleResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<AttemptError>,
}

/// Content hash keying replay: SHA-256 over the compact JSON serialization
/// of `{"identity", "prompt", "config", "attempt"}` in that field order, with
/// the config in its redacted form.
pub fn request_key(identity: &str, prompt: &str, config: &EndpointConfig, attempt: u32) -> String {
    #[derive(Serialize)]
    struct KeyDoc<'a> {
        identity: &'a str,
        prompt: &'a str,
        config: &'a EndpointConfig,
        attempt: u32,
    }
    let redacted = config.redacted();
    let doc = KeyDoc {
        identity,
        prompt,
        config: &redacted,
        attempt,
    };
    let bytes = serde_json::to_vec(&doc).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Default)]
struct Budget {
    usage: TokenUsage,
    limit: Option<u64>,
}

struct Inner {
    kind: OracleKind,
    identity: String,
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    concurrency: usize,
    clock: Clock,
    keep_transcripts: bool,
    budget: Mutex<Budget>,
    transcripts: Mutex<Vec<Transcript>>,
    counters: Mutex<HashMap<String, u32>>,
    recorder: Option<Arc<CassetteRecorder>>,
    queries: AtomicUsize,
    substitute_served: Option<Arc<AtomicU64>>,
}

/// Cheaply clonable handle to one endpoint.
#[derive(Clone)]
pub struct OracleHandle {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for OracleHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleHandle")
            .field("kind", &self.inner.kind)
            .field("identity", &self.inner.identity)
            .finish()
    }
}

pub struct OracleBuilder {
    kind: OracleKind,
    identity: String,
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    concurrency: usize,
    clock: Clock,
    keep_transcripts: bool,
    token_limit: Option<u64>,
    recorder: Option<Arc<CassetteRecorder>>,
    substitute_served: Option<Arc<AtomicU64>>,
}

impl OracleBuilder {
    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn token_limit(mut self, limit: Option<u64>) -> Self {
        self.token_limit = limit;
        self
    }

    /// Disable the in-memory transcript log (cassette recording still
    /// works). Useful for long simulations.
    pub fn keep_transcripts(mut self, keep: bool) -> Self {
        self.keep_transcripts = keep;
        self
    }

    pub fn record_to(mut self, recorder: Arc<CassetteRecorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn build(self) -> OracleHandle {
        OracleHandle {
            inner: Arc::new(Inner {
                kind: self.kind,
                identity: self.identity,
                backend: self.backend,
                retry: self.retry,
                concurrency: self.concurrency,
                clock: self.clock,
                keep_transcripts: self.keep_transcripts,
                budget: Mutex::new(Budget {
                    usage: TokenUsage::default(),
                    limit: self.token_limit,
                }),
                transcripts: Mutex::new(Vec::new()),
                counters: Mutex::new(HashMap::new()),
                recorder: self.recorder,
                queries: AtomicUsize::new(0),
                substitute_served: self.substitute_served,
            }),
        }
    }
}

impl OracleHandle {
    pub fn builder(
        kind: OracleKind,
        identity: impl Into<String>,
        backend: Box<dyn ChatBackend>,
    ) -> OracleBuilder {
        OracleBuilder {
            kind,
            identity: identity.into(),
            backend,
            retry: RetryPolicy::default(),
            concurrency: 4,
            clock: Clock::System,
            keep_transcripts: true,
            token_limit: None,
            recorder: None,
            substitute_served: None,
        }
    }

    /// Scripted simulator handle.
    pub fn scripted(endpoint: ScriptedEndpoint) -> OracleBuilder {
        let identity = endpoint.identity.clone();
        Self::builder(OracleKind::Scripted, identity, Box::new(ScriptedBackend::new(endpoint)))
    }

    /// Live OpenAI-compatible endpoint.
    pub fn http(endpoint: HttpEndpoint) -> Result<OracleBuilder, OracleError> {
        let identity = endpoint.identity.clone();
        let backend = HttpBackend::new(endpoint)?;
        Ok(Self::builder(OracleKind::Http, identity, Box::new(backend)))
    }

    /// Fixed-probability router between two handles. The router itself does
    /// not retry; retries happen inside the routed handles.
    pub fn mixed(policy: MixedRoutingPolicy) -> Result<OracleBuilder, OracleError> {
        let identity = policy.identity();
        let backend = MixedBackend::new(policy)?;
        let served = backend.substitute_counter();
        let mut b = Self::builder(OracleKind::Mixed, identity, Box::new(backend))
            .retry(RetryPolicy::single_attempt());
        b.substitute_served = Some(served);
        Ok(b)
    }

    /// Replay of recorded transcripts for `identity`.
    pub fn replay(identity: impl Into<String>, transcripts: &[Transcript]) -> OracleBuilder {
        let identity = identity.into();
        let backend = ReplayBackend::new(&identity, transcripts);
        Self::builder(OracleKind::Replay, identity, Box::new(backend))
    }

    pub fn kind(&self) -> OracleKind {
        self.inner.kind
    }

    pub fn identity(&self) -> &str {
        &self.inner.identity
    }

    pub fn concurrency(&self) -> usize {
        self.inner.concurrency
    }

    pub fn clock(&self) -> Clock {
        self.inner.clock
    }

    pub fn usage(&self) -> TokenUsage {
        self.inner.budget.lock().unwrap().usage
    }

    pub fn transcripts(&self) -> Vec<Transcript> {
        self.inner.transcripts.lock().unwrap().clone()
    }

    /// Completed `query` calls, successful or not.
    pub fn query_count(&self) -> usize {
        self.inner.queries.load(Ordering::SeqCst)
    }

    /// Requests a mixed router forwarded to its substitute.
    pub fn substitute_served(&self) -> Option<u64> {
        self.inner
            .substitute_served
            .as_ref()
            .map(|c| c.load(Ordering::SeqCst))
    }

    pub fn query(&self, prompt: &str, config: &EndpointConfig) -> Result<String, OracleError> {
        self.query_full(prompt, config).map(|r| r.text)
    }

    pub fn query_full(
        &self,
        prompt: &str,
        config: &EndpointConfig,
    ) -> Result<OracleResponse, OracleError> {
        config.validate()?;
        let result = self.run_attempts(prompt, config);
        self.inner.queries.fetch_add(1, Ordering::SeqCst);
        result
    }

    fn next_attempt(&self, base_key: &str) -> u32 {
        let mut counters = self.inner.counters.lock().unwrap();
        let slot = counters.entry(base_key.to_string()).or_insert(0);
        let a = *slot;
        *slot += 1;
        a
    }

    fn check_budget(&self) -> Result<(), OracleError> {
        let b = self.inner.budget.lock().unwrap();
        match b.limit {
            Some(limit) if b.usage.total() >= limit => Err(OracleError::BudgetExceeded {
                used: b.usage.total(),
                limit,
            }),
            _ => Ok(()),
        }
    }

    fn run_attempts(&self, prompt: &str, config: &EndpointConfig) -> Result<OracleResponse, OracleError> {
        let inner = &self.inner;
        let base_key = request_key(&inner.identity, prompt, config, u32::MAX);
        let max = inner.retry.max_attempts.max(1);
        let mut last = String::new();
        for retry in 0..max {
            self.check_budget()?;
            if retry > 0 && inner.backend.sleeps_between_retries() {
                std::thread::sleep(inner.retry.backoff(retry - 1));
            }
            let attempt = self.next_attempt(&base_key);
            let ctx = RequestContext {
                key: request_key(&inner.identity, prompt, config, attempt),
                attempt,
                base_key: base_key.clone(),
            };
            let result = inner.backend.complete(prompt, config, &ctx);
            self.log(prompt, config, &ctx, &result)?;
            match result {
                Ok(resp) => {
                    inner.budget.lock().unwrap().usage.add(resp.usage);
                    return Ok(resp);
                }
                Err(AttemptError::Transport { message }) => {
                    log::warn!("{}: attempt {} failed: {message}", inner.identity, retry + 1);
                    last = message;
                }
                Err(AttemptError::Refused { status, message }) => {
                    return Err(OracleError::RefusedByPolicy { status, message })
                }
                Err(AttemptError::ReplayMiss { key }) => return Err(OracleError::ReplayMiss { key }),
            }
        }
        Err(OracleError::TransportFailure {
            attempts: max,
            message: last,
        })
    }

    fn log(
        &self,
        prompt: &str,
        config: &EndpointConfig,
        ctx: &RequestContext,
        result: &Result<OracleResponse, AttemptError>,
    ) -> Result<(), OracleError> {
        let inner = &self.inner;
        if !inner.keep_transcripts && inner.recorder.is_none() {
            return Ok(());
        }
        let (response, error) = match result {
            Ok(r) => (Some(r.clone()), None),
            Err(AttemptError::ReplayMiss { .. }) => return Ok(()),
            Err(e) => (None, Some(e.clone())),
        };
        let t = Transcript {
            schema_version: CASSETTE_SCHEMA_VERSION,
            key: ctx.key.clone(),
            attempt: ctx.attempt,
            request: TranscriptRequest {
                identity: inner.identity.clone(),
                prompt: prompt.to_string(),
                config: config.redacted(),
                timestamp: inner.clock.stamp(),
            },
            response,
            error,
        };
        if let Some(rec) = &inner.recorder {
            rec.append(&t)?;
        }
        if inner.keep_transcripts {
            inner.transcripts.lock().unwrap().push(t);
        }
        Ok(())
    }

    /// Issue many queries with at most `concurrency()` in flight. Results are
    /// returned in input order. Identical requests are issued sequentially
    /// in input order so attempt indices do not depend on scheduling.
    pub fn query_many(
        &self,
        requests: &[(String, EndpointConfig)],
    ) -> Vec<Result<OracleResponse, OracleError>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut by_key: HashMap<(&str, String), usize> = HashMap::new();
        for (i, (prompt, config)) in requests.iter().enumerate() {
            let cfg = serde_json::to_string(config).expect("serializable");
            let g = *by_key.entry((prompt.as_str(), cfg)).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        let run_group = |g: &Vec<usize>| -> Vec<(usize, Result<OracleResponse, OracleError>)> {
            g.iter()
                .map(|&i| (i, self.query_full(&requests[i].0, &requests[i].1)))
                .collect()
        };
        let workers = self.inner.concurrency.min(groups.len());
        let mut out: Vec<Option<Result<OracleResponse, OracleError>>> = vec![None; requests.len()];
        if workers <= 1 {
            for g in &groups {
                for (i, r) in run_group(g) {
                    out[i] = Some(r);
                }
            }
        } else {
            let next = AtomicUsize::new(0);
            let results = Mutex::new(Vec::new());
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(|| loop {
                        let gi = next.fetch_add(1, Ordering::SeqCst);
                        let Some(g) = groups.get(gi) else { break };
                        let r = run_group(g);
                        results.lock().unwrap().extend(r);
                    });
                }
            });
            for (i, r) in results.into_inner().unwrap() {
                out[i] = Some(r);
            }
        }
        out.into_iter().map(|r| r.expect("every request answered")).collect()
    }
}
