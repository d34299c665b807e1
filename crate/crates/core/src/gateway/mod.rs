//! Provider-agnostic completion calls.
//!
//! [`Gateway`] wraps a [`Provider`] with the retry policy, an optional
//! on-disk [`ResponseCache`], an in-flight limit and call accounting.
//! Per-sentence call logs are kept by [`Session`].

mod cache;
mod http;
mod mock;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheStats, ResponseCache};
pub use http::{HttpFormat, HttpProvider};
pub use mock::{MockRule, ScriptedProvider};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("no scripted rule matches prompt starting {excerpt:?}")]
    NoRuleMatched { excerpt: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be a finite value >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub cached: bool,
}

impl CompletionResponse {
    pub fn new(text: impl Into<String>) -> Self {
        CompletionResponse {
            text: text.into(),
            provider_meta: BTreeMap::new(),
            cached: false,
        }
    }
}

/// Stable content hash over every request field.
pub fn cache_key(req: &CompletionRequest) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        v: u32,
        prompt: &'a str,
        model_id: &'a str,
        temperature: f64,
        max_tokens: u32,
        stop: &'a Option<Vec<String>>,
    }
    let material = KeyMaterial {
        v: 1,
        prompt: &req.prompt,
        model_id: &req.model_id,
        temperature: req.temperature,
        max_tokens: req.max_tokens,
        stop: &req.stop,
    };
    let bytes = serde_json::to_vec(&material).expect("key material serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpApi,
    #[default]
    ScriptedMock,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http_api" | "http" => Ok(ProviderKind::HttpApi),
            "scripted_mock" | "mock" => Ok(ProviderKind::ScriptedMock),
            other => Err(format!("unknown provider kind {other:?} (expected http_api or scripted_mock)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before attempt `i + 2`; the last entry repeats.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: vec![500, 2000],
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            backoff_ms: Vec::new(),
        }
    }

    fn delay(&self, failed_attempts: u32) -> Duration {
        let idx = (failed_attempts as usize).saturating_sub(1);
        let ms = self
            .backoff_ms
            .get(idx)
            .or(self.backoff_ms.last())
            .copied()
            .unwrap_or(0);
        Duration::from_millis(ms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub http: HttpFormat,
    /// Extra rules loaded from a TOML or JSON file, appended after `script`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<MockRule>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::ScriptedMock,
            endpoint: None,
            credential_env: None,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            timeout_secs: 120,
            http: HttpFormat::default(),
            script_file: None,
            script: Vec::new(),
        }
    }
}

impl ProviderConfig {
    pub fn scripted(script: Vec<MockRule>) -> Self {
        ProviderConfig {
            kind: ProviderKind::ScriptedMock,
            retry: RetryPolicy::no_backoff(1),
            script,
            ..ProviderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::InvalidConfig("retry.max_attempts must be >= 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        match self.kind {
            ProviderKind::HttpApi => {
                if self.endpoint.as_deref().unwrap_or("").is_empty() {
                    return Err(GatewayError::InvalidConfig("http_api requires endpoint".into()));
                }
                if self.credential_env.as_deref().unwrap_or("").is_empty() {
                    return Err(GatewayError::InvalidConfig(
                        "http_api requires credential_env".into(),
                    ));
                }
            }
            ProviderKind::ScriptedMock => {
                if self.script.is_empty() && self.script_file.is_none() {
                    return Err(GatewayError::InvalidConfig(
                        "scripted_mock requires a non-empty script".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Inline rules followed by the rules in `script_file`.
    pub fn resolved_script(&self) -> Result<Vec<MockRule>, GatewayError> {
        let mut rules = self.script.clone();
        if let Some(path) = &self.script_file {
            rules.extend(mock::load_script_file(path)?);
        }
        if rules.is_empty() {
            return Err(GatewayError::InvalidConfig(
                "scripted_mock requires a non-empty script".into(),
            ));
        }
        Ok(rules)
    }

    /// Rebases a relative `script_file` onto `base`.
    pub fn rebase_paths(&mut self, base: &Path) {
        if let Some(p) = &self.script_file {
            if p.is_relative() {
                self.script_file = Some(base.join(p));
            }
        }
    }
}

/// A completion backend. Implementations make exactly one attempt per call.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn invoke(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

pub fn build_provider(cfg: &ProviderConfig) -> Result<Arc<dyn Provider>, GatewayError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        ProviderKind::ScriptedMock => Arc::new(ScriptedProvider::new(cfg.resolved_script()?)),
        ProviderKind::HttpApi => Arc::new(HttpProvider::from_config(cfg)?),
    })
}

struct InFlightLimiter {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimiter {
    fn new(limit: usize) -> Self {
        InFlightLimiter {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightPermit { limiter: self }
    }
}

struct InFlightPermit<'a> {
    limiter: &'a InFlightLimiter,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.limiter.active.lock().unwrap() -= 1;
        self.limiter.freed.notify_one();
    }
}

/// One request and the response it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: CompletionRequest,
    pub response: CompletionResponse,
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    cache: Option<ResponseCache>,
    limiter: InFlightLimiter,
    provider_calls: AtomicU64,
    recording: Option<Mutex<Vec<Exchange>>>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Gateway {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, GatewayError> {
        let provider = build_provider(cfg)?;
        Ok(Gateway::with_provider(provider, cfg.retry.clone(), cfg.max_in_flight))
    }

    pub fn with_provider(provider: Arc<dyn Provider>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Gateway {
            provider,
            retry,
            cache: None,
            limiter: InFlightLimiter::new(max_in_flight),
            provider_calls: AtomicU64::new(0),
            recording: None,
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Keeps a gateway-wide log of every exchange in issue order.
    pub fn with_recording(mut self) -> Self {
        self.recording = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Number of times the underlying provider has been invoked, retries included.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// Calls the provider, retrying transient failures. Never consults the cache.
    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        req.validate()?;
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                self.provider.invoke(req)
            };
            match result {
                Ok(mut resp) => {
                    resp.cached = false;
                    return Ok(resp);
                }
                Err(e) if e.is_transient() && attempt < max => {
                    log::warn!("attempt {attempt}/{max} failed: {e}; retrying");
                    std::thread::sleep(self.retry.delay(attempt));
                }
                Err(e) if e.is_transient() => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Serves from the cache when possible, otherwise completes and persists.
    /// Concurrent identical requests share one provider call.
    pub fn cached_complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let resp = self.cached_complete_inner(req)?;
        if let Some(log) = &self.recording {
            log.lock().unwrap().push(Exchange {
                request: req.clone(),
                response: resp.clone(),
            });
        }
        Ok(resp)
    }

    fn cached_complete_inner(&self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let Some(cache) = &self.cache else {
            return self.complete(req);
        };
        req.validate()?;
        let key = cache_key(req);
        if let Some(hit) = cache.get(&key, req) {
            return Ok(hit);
        }
        let lock = self
            .key_locks
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let _guard = lock.lock().unwrap();
        if let Some(hit) = cache.get(&key, req) {
            return Ok(hit);
        }
        let resp = self.complete(req)?;
        if let Err(e) = cache.put(&key, req, &resp) {
            log::warn!("failed to persist cache entry {key}: {e}");
        }
        Ok(resp)
    }

    /// Gateway-wide transcript; empty unless built `with_recording`.
    pub fn transcript(&self) -> Vec<Exchange> {
        self.recording
            .as_ref()
            .map(|log| log.lock().unwrap().clone())
            .unwrap_or_default()
    }

    pub fn session(&self) -> Session<'_> {
        Session {
            gateway: self,
            exchanges: Vec::new(),
        }
    }
}

/// Call log for one sentence's pipeline run.
pub struct Session<'g> {
    gateway: &'g Gateway,
    exchanges: Vec<Exchange>,
}

impl Session<'_> {
    pub fn complete(&mut self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let resp = self.gateway.cached_complete(req)?;
        self.exchanges.push(Exchange {
            request: req.clone(),
            response: resp.clone(),
        });
        Ok(resp)
    }

    /// Bypasses the cache; used when re-asking the same prompt.
    pub fn complete_fresh(&mut self, req: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let resp = self.gateway.complete(req)?;
        self.exchanges.push(Exchange {
            request: req.clone(),
            response: resp.clone(),
        });
        Ok(resp)
    }

    pub fn transcript(&self) -> &[Exchange] {
        &self.exchanges
    }

    pub fn into_transcript(self) -> Vec<Exchange> {
        self.exchanges
    }
}
