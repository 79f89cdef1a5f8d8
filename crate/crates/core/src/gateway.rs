//! Uniform access to chat-completion model backends with deterministic
//! decoding, response caching, retry with exponential backoff, and bounded
//! parallel fan-out.
//!
//! Four backend kinds cover production and test use:
//!
//! * `http-chat` — JSON chat-completion over HTTP: one system and one user
//!   message, temperature 0, the first choice's message content read back.
//! * `scripted` — pops pre-loaded responses from a queue; exhaustion is a
//!   backend error.
//! * `echo-initial` — answers a hybrid prompt with its own embedded initial
//!   attempt, making the correction pipeline an exact identity on the
//!   tagger's output.
//! * `perfect-oracle` — answers with the gold gloss for the prompt's test
//!   sentence (the last `Segmented:` line); drives accuracy to exactly 1.0.
//!
//! Every completed request is cached in memory, and on disk when a cache
//! directory is configured; the key digests everything that determines the
//! completion, so a warm cache answers repeat runs without touching the
//! backend at all. Disk writes go through write-temp-then-rename and are
//! safe under concurrent use.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which implementation answers `complete` calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// JSON chat-completion endpoint over HTTP.
    HttpChat,
    /// Queue of canned responses, for tests and offline runs.
    Scripted,
    /// Echoes the hybrid prompt's initial attempt back, wrapped in `###`.
    EchoInitial,
    /// Looks up the gold gloss for the prompt's test sentence (harness only).
    PerfectOracle,
}

impl BackendKind {
    /// Stable kebab-case name, matching the serialized form.
    pub fn name(&self) -> &'static str {
        match self {
            BackendKind::HttpChat => "http-chat",
            BackendKind::Scripted => "scripted",
            BackendKind::EchoInitial => "echo-initial",
            BackendKind::PerfectOracle => "perfect-oracle",
        }
    }
}

fn default_max_output_tokens() -> u32 {
    512
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    250
}

/// Connection and decoding settings for one model backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub backend_kind: BackendKind,
    /// Model identifier; also selects the credential variable
    /// `GLOSSPIPE_API_KEY_<MODEL>` (uppercased, non-alphanumerics as `_`).
    pub model_name: String,
    /// Chat-completion URL; required for `http-chat`, ignored otherwise.
    #[serde(default)]
    pub endpoint: String,
    /// Sampling temperature. Must be 0: experiment runs use greedy decoding.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retries after the first attempt for retryable failures (429, 5xx,
    /// network errors), with exponential backoff.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Backoff before retry k is `retry_base_ms << k`.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl BackendConfig {
    /// A config of the given kind with default decoding settings.
    pub fn new(backend_kind: BackendKind, model_name: impl Into<String>) -> BackendConfig {
        BackendConfig {
            backend_kind,
            model_name: model_name.into(),
            endpoint: String::new(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    /// Checks the invariants shared by all experiment runs.
    pub fn validate(&self) -> Result<()> {
        if self.model_name.is_empty() {
            return Err(Error::Config("backend model_name is empty".into()));
        }
        if self.temperature != 0.0 {
            return Err(Error::Config(format!(
                "temperature must be 0 (greedy decoding), got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::Config("max_output_tokens must be at least 1".into()));
        }
        if self.backend_kind == BackendKind::HttpChat && self.endpoint.is_empty() {
            return Err(Error::Config(format!(
                "backend {} is http-chat but has no endpoint",
                self.model_name
            )));
        }
        Ok(())
    }

    /// Name of the environment variable that must hold this backend's API
    /// key. Credentials are never read from config files.
    pub fn api_key_env_var(&self) -> String {
        let sanitized: String = self
            .model_name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_uppercase()
                } else {
                    '_'
                }
            })
            .collect();
        format!("GLOSSPIPE_API_KEY_{sanitized}")
    }
}

/// One completed request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmResponse {
    pub raw_text: String,
    /// Model name that produced the text.
    pub backend: String,
    pub latency_ms: u64,
    /// True when the text came from the cache rather than the backend.
    pub cached: bool,
}

/// One line of the per-run request log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub key: String,
    pub model: String,
    pub latency_ms: u64,
    pub cached: bool,
}

/// On-disk cache record; the file is named `{key}.json`.
#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    model_name: String,
    raw_text: String,
}

/// Content-addressed cache key: a SHA-256 digest over everything that
/// determines a completion — model name, temperature bits, output budget,
/// and both message texts. Each field is length-prefixed before hashing so
/// adjacent fields cannot be confused, and the key is stable across runs
/// and platforms.
pub fn cache_key(config: &BackendConfig, system_text: &str, user_text: &str) -> String {
    let mut hasher = Sha256::new();
    let mut frame = |bytes: &[u8]| {
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    frame(config.model_name.as_bytes());
    frame(&config.temperature.to_le_bytes());
    frame(&config.max_output_tokens.to_le_bytes());
    frame(system_text.as_bytes());
    frame(user_text.as_bytes());
    hex::encode(hasher.finalize())
}

/// Writes `bytes` to `path` via a unique temp file in the same directory
/// followed by an atomic rename, so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("cannot write to {}", path.display())))?;
    let tmp_name = format!(
        ".{}.tmp-{}-{}",
        file_name.to_string_lossy(),
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => PathBuf::from(&tmp_name),
    };
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

enum BackendImpl {
    Http {
        client: reqwest::blocking::Client,
        api_key: String,
    },
    Scripted(Mutex<VecDeque<String>>),
    EchoInitial,
    PerfectOracle(Mutex<HashMap<String, String>>),
}

enum CallError {
    Retryable(Error),
    Fatal(Error),
}

const INITIAL_ATTEMPT_PREFIX: &str = "Initial attempt (from statistical model): ";
const SEGMENTED_PREFIX: &str = "Segmented: ";

/// Thread-safe front door to one backend, with caching and retry.
pub struct Gateway {
    config: BackendConfig,
    backend: BackendImpl,
    cache_dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, String>>,
    log: Mutex<Vec<RequestLogEntry>>,
    backend_calls: AtomicU64,
}

impl Gateway {
    /// Builds a gateway. For `http-chat` this requires the credential
    /// variable named by [`BackendConfig::api_key_env_var`] to be set and
    /// non-empty. A cache directory is created if it does not exist;
    /// scripted queues and oracle tables start empty and are loaded with
    /// [`Gateway::push_scripted_responses`] / [`Gateway::load_oracle`].
    pub fn new(config: BackendConfig, cache_dir: Option<&Path>) -> Result<Gateway> {
        config.validate()?;
        if let Some(dir) = cache_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let backend = match config.backend_kind {
            BackendKind::HttpChat => {
                let var = config.api_key_env_var();
                let api_key = std::env::var(&var).ok().filter(|k| !k.is_empty()).ok_or_else(
                    || {
                        Error::Config(format!(
                            "backend {} needs an API key in ${var}",
                            config.model_name
                        ))
                    },
                )?;
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(config.timeout_ms))
                    .build()
                    .map_err(|e| Error::Backend(format!("failed to build http client: {e}")))?;
                BackendImpl::Http { client, api_key }
            }
            BackendKind::Scripted => BackendImpl::Scripted(Mutex::new(VecDeque::new())),
            BackendKind::EchoInitial => BackendImpl::EchoInitial,
            BackendKind::PerfectOracle => BackendImpl::PerfectOracle(Mutex::new(HashMap::new())),
        };
        Ok(Gateway {
            config,
            backend,
            cache_dir: cache_dir.map(Path::to_path_buf),
            memory: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
            backend_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// How many times a backend was actually invoked (cache misses only).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    /// Appends responses to a scripted backend's queue.
    pub fn push_scripted_responses(
        &self,
        responses: impl IntoIterator<Item = String>,
    ) -> Result<()> {
        match &self.backend {
            BackendImpl::Scripted(queue) => {
                queue.lock().expect("queue lock").extend(responses);
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "backend {} is {}, not scripted",
                self.config.model_name,
                self.config.backend_kind.name()
            ))),
        }
    }

    /// Loads `(segmented sentence, gold gloss)` pairs into a perfect-oracle
    /// backend.
    pub fn load_oracle(
        &self,
        pairs: impl IntoIterator<Item = (String, String)>,
    ) -> Result<()> {
        match &self.backend {
            BackendImpl::PerfectOracle(map) => {
                map.lock().expect("oracle lock").extend(pairs);
                Ok(())
            }
            _ => Err(Error::Config(format!(
                "backend {} is {}, not perfect-oracle",
                self.config.model_name,
                self.config.backend_kind.name()
            ))),
        }
    }

    /// Completes one prompt, answering from cache when possible. A cache
    /// hit is flagged `cached` and never touches the backend.
    pub fn complete(&self, system_text: &str, user_text: &str) -> Result<LlmResponse> {
        let key = cache_key(&self.config, system_text, user_text);
        let start = Instant::now();

        if let Some(raw_text) = self.lookup(&key)? {
            return Ok(self.respond(key, raw_text, start, true));
        }

        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let raw_text = self.call_backend(user_text, system_text)?;
        self.store(&key, &raw_text)?;
        Ok(self.respond(key, raw_text, start, false))
    }

    /// Copy of the per-run request log, in completion order.
    pub fn request_log(&self) -> Vec<RequestLogEntry> {
        self.log.lock().expect("log lock").clone()
    }

    /// Writes the request log as JSONL (one entry per line, atomically).
    pub fn write_request_log(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for entry in self.request_log() {
            out.push_str(&serde_json::to_string(&entry)?);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }

    fn respond(&self, key: String, raw_text: String, start: Instant, cached: bool) -> LlmResponse {
        let latency_ms = start.elapsed().as_millis() as u64;
        self.log.lock().expect("log lock").push(RequestLogEntry {
            key,
            model: self.config.model_name.clone(),
            latency_ms,
            cached,
        });
        LlmResponse {
            raw_text,
            backend: self.config.model_name.clone(),
            latency_ms,
            cached,
        }
    }

    fn cache_file(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn lookup(&self, key: &str) -> Result<Option<String>> {
        if let Some(text) = self.memory.lock().expect("memory lock").get(key) {
            return Ok(Some(text.clone()));
        }
        let Some(path) = self.cache_file(key) else {
            return Ok(None);
        };
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let record: CacheRecord = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if record.key != key {
            return Err(Error::Data(format!(
                "cache record in {} carries key {}, expected {key}",
                path.display(),
                record.key
            )));
        }
        self.memory
            .lock()
            .expect("memory lock")
            .insert(key.to_string(), record.raw_text.clone());
        Ok(Some(record.raw_text))
    }

    fn store(&self, key: &str, raw_text: &str) -> Result<()> {
        self.memory
            .lock()
            .expect("memory lock")
            .insert(key.to_string(), raw_text.to_string());
        if let Some(path) = self.cache_file(key) {
            let record = CacheRecord {
                key: key.to_string(),
                model_name: self.config.model_name.clone(),
                raw_text: raw_text.to_string(),
            };
            write_atomic(&path, serde_json::to_string_pretty(&record)?.as_bytes())?;
        }
        Ok(())
    }

    fn call_backend(&self, user_text: &str, system_text: &str) -> Result<String> {
        match &self.backend {
            BackendImpl::Http { client, api_key } => {
                self.http_with_retry(client, api_key, system_text, user_text)
            }
            BackendImpl::Scripted(queue) => {
                queue.lock().expect("queue lock").pop_front().ok_or_else(|| {
                    Error::Backend(format!(
                        "scripted backend {} is out of queued responses",
                        self.config.model_name
                    ))
                })
            }
            BackendImpl::EchoInitial => {
                let attempt = user_text
                    .lines()
                    .filter_map(|line| line.strip_prefix(INITIAL_ATTEMPT_PREFIX))
                    .next_back()
                    .ok_or_else(|| {
                        Error::Backend(format!(
                            "echo-initial backend needs a hybrid prompt containing an \
                             {INITIAL_ATTEMPT_PREFIX:?} line"
                        ))
                    })?;
                Ok(format!("###{attempt}###"))
            }
            BackendImpl::PerfectOracle(map) => {
                let segmented = user_text
                    .lines()
                    .filter_map(|line| line.strip_prefix(SEGMENTED_PREFIX))
                    .next_back()
                    .ok_or_else(|| {
                        Error::Backend(format!(
                            "perfect-oracle backend needs a prompt containing a \
                             {SEGMENTED_PREFIX:?} line"
                        ))
                    })?;
                let map = map.lock().expect("oracle lock");
                let gold = map.get(segmented).ok_or_else(|| {
                    Error::Backend(format!(
                        "perfect-oracle backend has no gold gloss for {segmented:?}"
                    ))
                })?;
                Ok(format!("###{gold}###"))
            }
        }
    }

    fn http_with_retry(
        &self,
        client: &reqwest::blocking::Client,
        api_key: &str,
        system_text: &str,
        user_text: &str,
    ) -> Result<String> {
        let mut attempt: u32 = 0;
        loop {
            match self.http_once(client, api_key, system_text, user_text) {
                Ok(text) => return Ok(text),
                Err(CallError::Fatal(e)) => return Err(e),
                Err(CallError::Retryable(e)) => {
                    if attempt >= self.config.max_retries {
                        return Err(e);
                    }
                    let delay = self
                        .config
                        .retry_base_ms
                        .saturating_mul(1u64 << attempt.min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }

    fn http_once(
        &self,
        client: &reqwest::blocking::Client,
        api_key: &str,
        system_text: &str,
        user_text: &str,
    ) -> std::result::Result<String, CallError> {
        let body = serde_json::json!({
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
        });
        let response = client
            .post(&self.config.endpoint)
            .bearer_auth(api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                CallError::Retryable(Error::Backend(format!(
                    "request to {} failed: {e}",
                    self.config.endpoint
                )))
            })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            CallError::Retryable(Error::Backend(format!(
                "failed reading response body: {e}"
            )))
        })?;
        if !status.is_success() {
            let error = Error::Backend(format!(
                "backend {} returned HTTP {status}: {}",
                self.config.model_name,
                text.chars().take(200).collect::<String>()
            ));
            return if status.as_u16() == 429 || status.is_server_error() {
                Err(CallError::Retryable(error))
            } else {
                Err(CallError::Fatal(error))
            };
        }
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            CallError::Fatal(Error::Backend(format!(
                "backend {} sent unparseable JSON: {e}",
                self.config.model_name
            )))
        })?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                CallError::Fatal(Error::Backend(format!(
                    "backend {} response has no choices[0].message.content",
                    self.config.model_name
                )))
            })?;
        Ok(content.to_string())
    }
}

/// Runs `f(0), f(1), ..., f(count - 1)` on at most `max_concurrency` worker
/// threads (at least one), returning results in index order regardless of
/// completion order. `f` observes each index exactly once.
pub fn run_bounded<T, F>(count: usize, max_concurrency: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = max_concurrency.max(1).min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = (0..count).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let value = f(i);
                *slots[i].lock().expect("slot lock") = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot lock")
                .expect("every index is dispatched exactly once")
        })
        .collect()
}
