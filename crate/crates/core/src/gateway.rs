//! Judge gateway: dispatches rendered prompts to pluggable backends with
//! retry/backoff, a concurrency limit, and a record/replay cassette.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed;
use crate::templates::TemplateName;

/// Sampling parameters forwarded to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub repetition_penalty: f64,
    /// sampling seed, for backends that accept one
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding { temperature: 0.8, top_p: 0.8, top_k: 20, repetition_penalty: 1.03, seed: None }
    }
}

impl Decoding {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidProfile(m.to_string()));
        if !(0.0..=1.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return bad("top_p must lie in [0, 1]");
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1");
        }
        if !(self.repetition_penalty >= 1.0) {
            return bad("repetition_penalty must be at least 1");
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    /// `POST {endpoint}` with an OpenAI-style chat completion body
    #[default]
    OpenaiChat,
    /// `POST {endpoint}` with `{"prompt", ...decoding}`, expecting `{"text"}`
    HttpJson,
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    5
}

/// One configured judge backend. `auth_env` names the environment variable
/// holding the API key; the key itself is never written anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    #[serde(default)]
    pub kind: AdapterKind,
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl BackendProfile {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.name.trim().is_empty() {
            return Err(GatewayError::InvalidProfile("empty backend name".into()));
        }
        if self.endpoint.trim().is_empty() {
            return Err(GatewayError::InvalidProfile(format!("backend {} has no endpoint", self.name)));
        }
        self.decoding.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(default, rename = "backend")]
    pub backends: Vec<BackendProfile>,
}

impl BackendConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, GatewayError> {
        let cfg: BackendConfig = toml::from_str(s).map_err(|e| GatewayError::InvalidProfile(e.to_string()))?;
        for b in &cfg.backends {
            b.validate()?;
        }
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| GatewayError::InvalidProfile(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn get(&self, name: &str) -> Option<&BackendProfile> {
        self.backends.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend rejected request: {0}")]
    Permanent(String),
    #[error("backend timed out")]
    Timeout,
}

impl BackendError {
    fn retryable(&self) -> bool {
        !matches!(self, BackendError::Permanent(_))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend {backend} unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { backend: String, attempts: u32, last: String },
    #[error("no cassette entry for key {0}")]
    CassetteMiss(String),
    #[error("backend {0} timed out")]
    Timeout(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
    #[error("environment variable {0} is not set")]
    MissingSecret(String),
    #[error("invalid backend profile: {0}")]
    InvalidProfile(String),
    #[error("unknown backend {0}")]
    UnknownBackend(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::BackendUnavailable { .. } => "BackendUnavailable",
            GatewayError::CassetteMiss(_) => "CassetteMiss",
            GatewayError::Timeout(_) => "Timeout",
            GatewayError::Cassette { .. } => "CassetteError",
            GatewayError::MissingSecret(_) => "MissingSecret",
            GatewayError::InvalidProfile(_) => "InvalidProfile",
            GatewayError::UnknownBackend(_) => "UnknownBackend",
        }
    }
}

/// Minimal completion adapter every judge implements.
pub trait JudgeBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, BackendError>;
    fn max_retries(&self) -> u32 {
        default_retries()
    }
}

/// HTTP POST of a JSON body. Split out so tests can count and script calls.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, BackendError>;
}

pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, BackendError> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        let mut req = agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(BackendError::Timeout),
            Err(e) => return Err(BackendError::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| BackendError::Permanent(format!("bad json: {e}"))),
            408 | 429 | 500..=599 => Err(BackendError::Transient(format!("http {status}"))),
            _ => Err(BackendError::Permanent(format!("http {status}: {}", truncate(&text, 200)))),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// A remote judge reached over HTTP.
pub struct HttpBackend {
    profile: BackendProfile,
    secret: Option<String>,
    transport: Arc<dyn Transport>,
}

impl HttpBackend {
    /// Reads the secret from `profile.auth_env` (if any) now, so a missing
    /// key fails before any prompt is sent.
    pub fn new(profile: BackendProfile, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        profile.validate()?;
        let secret = match &profile.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::MissingSecret(var.clone()))?),
            None => None,
        };
        Ok(HttpBackend { profile, secret, transport })
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn request_body(&self, prompt: &str, d: &Decoding) -> Value {
        let mut body = match self.profile.kind {
            AdapterKind::OpenaiChat => json!({
                "model": self.profile.model.clone().unwrap_or_default(),
                "messages": [{"role": "user", "content": prompt}],
                "temperature": d.temperature,
                "top_p": d.top_p,
                "top_k": d.top_k,
                "repetition_penalty": d.repetition_penalty,
            }),
            AdapterKind::HttpJson => json!({
                "prompt": prompt,
                "temperature": d.temperature,
                "top_p": d.top_p,
                "top_k": d.top_k,
                "repetition_penalty": d.repetition_penalty,
            }),
        };
        if let Some(s) = d.seed {
            body["seed"] = json!(s);
        }
        body
    }
}

fn extract_text(kind: AdapterKind, v: &Value) -> Option<String> {
    let s = match kind {
        AdapterKind::OpenaiChat => v.pointer("/choices/0/message/content").or_else(|| v.pointer("/choices/0/text")),
        AdapterKind::HttpJson => v.get("text"),
    };
    s.and_then(Value::as_str).map(str::to_string)
}

impl JudgeBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.profile.name
    }

    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, BackendError> {
        let mut headers = Vec::new();
        if let Some(key) = &self.secret {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let body = self.request_body(prompt, decoding);
        let v = self.transport.post_json(
            &self.profile.endpoint,
            &headers,
            &body,
            Duration::from_secs(self.profile.timeout_secs),
        )?;
        extract_text(self.profile.kind, &v)
            .ok_or_else(|| BackendError::Permanent("response carries no completion text".into()))
    }

    fn max_retries(&self) -> u32 {
        self.profile.max_retries
    }
}

/// Exponential backoff: `base * factor^attempt`, jittered by ±`jitter`,
/// capped at `cap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
    pub cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_secs(1), factor: 2.0, jitter: 0.2, cap: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based), for a uniform draw
    /// `u` in [0, 1).
    pub fn delay(&self, attempt: u32, u: f64) -> Duration {
        let nominal = self.base.as_secs_f64() * self.factor.powi(attempt.min(64) as i32);
        let jittered = nominal * (1.0 + self.jitter * (2.0 * u - 1.0));
        Duration::from_secs_f64(jittered.min(self.cap.as_secs_f64()).max(0.0))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl FromStr for CassetteMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(CassetteMode::Live),
            "record" => Ok(CassetteMode::Record),
            "replay" => Ok(CassetteMode::Replay),
            other => Err(format!("unknown cassette mode {other:?} (live|record|replay)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub template: String,
    pub backend: String,
    pub latency_ms: u64,
    pub response: String,
}

/// Hash of everything that determines a response.
pub fn cassette_key(template: TemplateName, prompt: &str, backend: &str, decoding: &Decoding) -> String {
    let canonical = json!([template.as_str(), prompt, backend, decoding]);
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Append-only JSONL log of recorded responses. On load, later lines for
/// the same key win.
pub struct Cassette {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CassetteEntry>>,
    writer: Mutex<Option<File>>,
}

impl Cassette {
    pub fn in_memory() -> Self {
        Cassette { path: None, entries: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let err = |message: String| GatewayError::Cassette { path: path.display().to_string(), message };
        let mut entries = HashMap::new();
        match File::open(&path) {
            Ok(f) => {
                for (n, line) in BufReader::new(f).lines().enumerate() {
                    let line = line.map_err(|e| err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let e: CassetteEntry =
                        serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
                    entries.insert(e.key.clone(), e);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(err(e.to_string())),
        }
        Ok(Cassette { path: Some(path), entries: RwLock::new(entries), writer: Mutex::new(None) })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CassetteEntry> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn put(&self, entry: CassetteEntry) -> Result<(), GatewayError> {
        let mut w = self.writer.lock().unwrap();
        if let Some(path) = &self.path {
            let err = |message: String| GatewayError::Cassette { path: path.display().to_string(), message };
            if w.is_none() {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
                }
                *w = Some(OpenOptions::new().create(true).append(true).open(path).map_err(|e| err(e.to_string()))?);
            }
            let file = w.as_mut().unwrap();
            let mut line = serde_json::to_string(&entry).map_err(|e| err(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(|e| err(e.to_string()))?;
            file.flush().map_err(|e| err(e.to_string()))?;
        }
        self.entries.write().unwrap().insert(entry.key.clone(), entry);
        Ok(())
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub const DEFAULT_CONCURRENCY: usize = 4;

pub struct Gateway {
    cassette: Arc<Cassette>,
    limiter: Semaphore,
    concurrency: usize,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
}

impl Gateway {
    pub fn new(cassette: Arc<Cassette>) -> Self {
        Gateway {
            cassette,
            limiter: Semaphore::new(DEFAULT_CONCURRENCY),
            concurrency: DEFAULT_CONCURRENCY,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleeper),
        }
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self.limiter = Semaphore::new(self.concurrency);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy, sleeper: Arc<dyn Sleeper>) -> Self {
        self.retry = retry;
        self.sleeper = sleeper;
        self
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }

    pub fn invoke(
        &self,
        backend: &dyn JudgeBackend,
        template: TemplateName,
        prompt: &str,
        decoding: &Decoding,
        mode: CassetteMode,
    ) -> Result<String, GatewayError> {
        let key = cassette_key(template, prompt, backend.name(), decoding);
        if mode == CassetteMode::Replay {
            return self.cassette.get(&key).map(|e| e.response).ok_or(GatewayError::CassetteMiss(key));
        }
        let started = Instant::now();
        let response = {
            let _permit = self.limiter.acquire();
            self.call_with_retry(backend, prompt, decoding, &key)?
        };
        if mode == CassetteMode::Record {
            self.cassette.put(CassetteEntry {
                key,
                template: template.as_str().to_string(),
                backend: backend.name().to_string(),
                latency_ms: started.elapsed().as_millis() as u64,
                response: response.clone(),
            })?;
        }
        Ok(response)
    }

    fn call_with_retry(
        &self,
        backend: &dyn JudgeBackend,
        prompt: &str,
        decoding: &Decoding,
        key: &str,
    ) -> Result<String, GatewayError> {
        let max_retries = backend.max_retries();
        let mut jitter = seed::rng(seed::stable_hash(key), &["backoff"]);
        let mut attempt = 0;
        loop {
            match backend.complete(prompt, decoding) {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable() && attempt < max_retries => {
                    tracing::debug!(backend = backend.name(), attempt, error = %e, "retrying");
                    self.sleeper.sleep(self.retry.delay(attempt, jitter.random::<f64>()));
                    attempt += 1;
                }
                Err(BackendError::Timeout) => return Err(GatewayError::Timeout(backend.name().to_string())),
                Err(e) => {
                    return Err(GatewayError::BackendUnavailable {
                        backend: backend.name().to_string(),
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
            }
        }
    }
}
