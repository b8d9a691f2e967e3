//! Uniform query interface over visual question answering backends.
//!
//! Four kinds exist:
//! - `http_chat`: OpenAI-compatible chat completions with an inline base64 PNG.
//! - `http_prediction`: prediction-style APIs (create, then poll a status URL).
//! - `oracle`: decodes the image and answers from the rule-based detector.
//! - `replay`: returns canned transcript text keyed by
//!   `(backend_id, prompt_id, image_id, trial)`.
//!
//! The hosted models are configuration presets, not dedicated clients.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::oracle::{classify, OracleParams};
use crate::parser::Verdict;
use crate::thermal::{decode, ColormapSpec, ThermalImage};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
const MAX_BACKOFF: Duration = Duration::from_secs(30);

pub const ORACLE_NORMAL_ANSWER: &str = "a) Yes";
pub const ORACLE_ANOMALY_ANSWER: &str = "b) No";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend '{backend}' configuration error: {message}")]
    Config { backend: String, message: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingAuth(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("replay transcript has no entry for backend={backend_id} prompt={prompt_id} image={image_id} trial={trial}")]
    ReplayMiss {
        backend_id: String,
        prompt_id: u8,
        image_id: String,
        trial: u32,
    },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("replay transcript {path}:{line}: {message}")]
    Transcript {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Configuration problems abort a run; everything else is a per-trial failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            BackendError::Config { .. } | BackendError::MissingAuth(_) | BackendError::Transcript { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    HttpPrediction,
    Oracle,
    Replay,
}

impl BackendKind {
    pub fn is_http(self) -> bool {
        matches!(self, BackendKind::HttpChat | BackendKind::HttpPrediction)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::HttpChat => "http_chat",
            BackendKind::HttpPrediction => "http_prediction",
            BackendKind::Oracle => "oracle",
            BackendKind::Replay => "replay",
        }
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "http_chat" => Ok(BackendKind::HttpChat),
            "http_prediction" => Ok(BackendKind::HttpPrediction),
            "oracle" => Ok(BackendKind::Oracle),
            "replay" => Ok(BackendKind::Replay),
            other => Err(format!("unknown backend kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub id: String,
    pub kind: BackendKind,
    /// URL; `{model}` is replaced by `model_name`.
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_env_var: Option<String>,
    pub sampling_temperature: Option<f64>,
    /// Whether the endpoint's input schema accepts a temperature.
    pub temperature_supported: bool,
    /// Input field carrying the prompt for prediction endpoints.
    pub prompt_field: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub poll_interval_ms: u64,
    pub requests_per_minute: Option<u32>,
    pub max_in_flight: usize,
    /// Trials per (image, prompt); defaults by kind when unset.
    pub trials: Option<u32>,
    pub transcript_path: Option<PathBuf>,
    /// Backend id to look up in the transcript; defaults to `id`.
    pub replay_source: Option<String>,
}

impl BackendConfig {
    pub fn new(id: impl Into<String>, kind: BackendKind) -> Self {
        Self {
            id: id.into(),
            kind,
            endpoint: None,
            model_name: None,
            auth_env_var: None,
            sampling_temperature: None,
            temperature_supported: true,
            prompt_field: "prompt".to_string(),
            timeout_secs: 120.0,
            max_retries: 3,
            initial_backoff_ms: 1000,
            poll_interval_ms: 1000,
            requests_per_minute: None,
            max_in_flight: 4,
            trials: None,
            transcript_path: None,
            replay_source: None,
        }
    }

    pub fn oracle() -> Self {
        Self::new("oracle", BackendKind::Oracle)
    }

    pub fn replay(id: impl Into<String>, transcript: impl Into<PathBuf>) -> Self {
        Self {
            transcript_path: Some(transcript.into()),
            ..Self::new(id, BackendKind::Replay)
        }
    }

    /// Chat-style backends default to 5 trials, the rest to 3.
    pub fn trials_per_pair(&self) -> u32 {
        self.trials.unwrap_or(match self.kind {
            BackendKind::HttpChat => 5,
            _ => 3,
        })
    }

    pub fn resolved_endpoint(&self) -> Option<String> {
        let model = self.model_name.as_deref().unwrap_or("");
        self.endpoint.as_ref().map(|e| e.replace("{model}", model))
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let err = |message: String| BackendError::Config {
            backend: self.id.clone(),
            message,
        };
        if self.id.trim().is_empty() {
            return Err(err("backend id must not be empty".into()));
        }
        if self.kind.is_http() {
            if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return Err(err("http backends need an endpoint".into()));
            }
            if self.auth_env_var.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return Err(err("http backends need auth_env_var".into()));
            }
        }
        if let Some(t) = self.sampling_temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(err(format!("sampling_temperature {t} outside [0, 2]")));
            }
        }
        if self.kind == BackendKind::Replay && self.transcript_path.is_none() {
            return Err(err("replay backends need transcript_path".into()));
        }
        if self.trials == Some(0) {
            return Err(err("trials must be at least 1".into()));
        }
        if self.requests_per_minute == Some(0) {
            return Err(err("requests_per_minute must be positive".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(err("timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Configurations for the three hosted models plus the offline oracle.
pub fn presets() -> Vec<BackendConfig> {
    vec![
        BackendConfig {
            endpoint: Some("https://api.openai.com/v1/chat/completions".into()),
            model_name: Some("gpt-4o".into()),
            auth_env_var: Some("OPENAI_API_KEY".into()),
            requests_per_minute: Some(60),
            trials: Some(5),
            ..BackendConfig::new("chatgpt-4o", BackendKind::HttpChat)
        },
        BackendConfig {
            endpoint: Some("https://api.replicate.com/v1/models/{model}/predictions".into()),
            model_name: Some("yorickvp/llava-13b".into()),
            auth_env_var: Some("REPLICATE_API_TOKEN".into()),
            sampling_temperature: Some(0.1),
            requests_per_minute: Some(60),
            trials: Some(3),
            ..BackendConfig::new("llava-13b", BackendKind::HttpPrediction)
        },
        BackendConfig {
            endpoint: Some("https://api.replicate.com/v1/models/{model}/predictions".into()),
            model_name: Some("andreasjansson/blip-2".into()),
            auth_env_var: Some("REPLICATE_API_TOKEN".into()),
            prompt_field: "question".into(),
            temperature_supported: false,
            requests_per_minute: Some(60),
            trials: Some(3),
            ..BackendConfig::new("blip-2", BackendKind::HttpPrediction)
        },
        BackendConfig::oracle(),
    ]
}

pub fn preset(id: &str) -> Option<BackendConfig> {
    presets().into_iter().find(|p| p.id == id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub latency_secs: f64,
    pub attempt_count: u32,
    pub backend_id: String,
}

/// One single-turn query: a prompt plus a PNG, with the identifiers replay needs.
#[derive(Debug, Clone, Copy)]
pub struct QueryRequest<'a> {
    pub prompt_id: u8,
    pub prompt_text: &'a str,
    pub image_id: &'a str,
    pub trial_index: u32,
    pub png: &'a [u8],
}

pub trait VqaBackend: Send + Sync {
    fn id(&self) -> &str;

    fn query(&self, request: &QueryRequest<'_>) -> Result<RawResponse, BackendError>;
}

fn check_png(png: &[u8]) -> Result<(), BackendError> {
    if png.len() < PNG_SIGNATURE.len() || png[..8] != PNG_SIGNATURE {
        return Err(BackendError::InvalidImage("missing PNG signature".into()));
    }
    Ok(())
}

/// Shared inputs for backends that need domain context.
#[derive(Debug, Clone, Default)]
pub struct BackendContext {
    pub colormap: ColormapSpec,
    pub oracle: OracleParams,
}

pub fn build_backend(
    config: &BackendConfig,
    ctx: &BackendContext,
) -> Result<Arc<dyn VqaBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Oracle => Arc::new(OracleBackend::new(&config.id, ctx.colormap.clone(), ctx.oracle)),
        BackendKind::Replay => Arc::new(ReplayBackend::from_config(config)?),
        BackendKind::HttpChat => Arc::new(HttpChatBackend::new(config.clone())?),
        BackendKind::HttpPrediction => Arc::new(HttpPredictionBackend::new(config.clone())?),
    })
}

/// Answers from the rule-based detector; the same image always gets the
/// same answer.
pub struct OracleBackend {
    id: String,
    colormap: ColormapSpec,
    params: OracleParams,
    cache: Mutex<HashMap<u64, String>>,
}

impl OracleBackend {
    pub fn new(id: &str, colormap: ColormapSpec, params: OracleParams) -> Self {
        Self {
            id: id.to_string(),
            colormap,
            params,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn answer(&self, png: &[u8]) -> Result<String, BackendError> {
        let image = ThermalImage::from_png_bytes(png).map_err(|e| BackendError::InvalidImage(e.to_string()))?;
        let decoded = decode(&image, &self.colormap);
        // An image with too little decodable content is itself anomalous.
        let verdict = classify(&decoded.field, &self.params)
            .map(|r| r.verdict)
            .unwrap_or(Verdict::Anomaly);
        Ok(match verdict {
            Verdict::Normal => ORACLE_NORMAL_ANSWER,
            _ => ORACLE_ANOMALY_ANSWER,
        }
        .to_string())
    }
}

impl VqaBackend for OracleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, request: &QueryRequest<'_>) -> Result<RawResponse, BackendError> {
        check_png(request.png)?;
        let start = Instant::now();
        let mut hasher = DefaultHasher::new();
        request.png.hash(&mut hasher);
        let key = hasher.finish();
        let cached = self.cache.lock().expect("oracle cache poisoned").get(&key).cloned();
        let text = match cached {
            Some(t) => t,
            None => {
                let t = self.answer(request.png)?;
                self.cache
                    .lock()
                    .expect("oracle cache poisoned")
                    .insert(key, t.clone());
                t
            }
        };
        Ok(RawResponse {
            text,
            latency_secs: start.elapsed().as_secs_f64(),
            attempt_count: 1,
            backend_id: self.id.clone(),
        })
    }
}

/// One line of a replay transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub backend_id: String,
    pub prompt_id: u8,
    pub image_id: String,
    pub trial: u32,
    pub text: String,
}

type ReplayKey = (String, u8, String, u32);

pub struct ReplayBackend {
    id: String,
    source: String,
    entries: HashMap<ReplayKey, String>,
}

impl ReplayBackend {
    pub fn new(id: &str, source: &str, entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let entries = entries
            .into_iter()
            .map(|e| ((e.backend_id, e.prompt_id, e.image_id, e.trial), e.text))
            .collect();
        Self {
            id: id.to_string(),
            source: source.to_string(),
            entries,
        }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        let path = config.transcript_path.as_ref().ok_or_else(|| BackendError::Config {
            backend: config.id.clone(),
            message: "replay backends need transcript_path".into(),
        })?;
        let entries = read_transcript(path)?;
        let source = config.replay_source.as_deref().unwrap_or(&config.id);
        Ok(Self::new(&config.id, source, entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl VqaBackend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn query(&self, request: &QueryRequest<'_>) -> Result<RawResponse, BackendError> {
        let key = (
            self.source.clone(),
            request.prompt_id,
            request.image_id.to_string(),
            request.trial_index,
        );
        let text = self.entries.get(&key).ok_or_else(|| BackendError::ReplayMiss {
            backend_id: self.source.clone(),
            prompt_id: request.prompt_id,
            image_id: request.image_id.to_string(),
            trial: request.trial_index,
        })?;
        Ok(RawResponse {
            text: text.clone(),
            latency_secs: 0.0,
            attempt_count: 1,
            backend_id: self.id.clone(),
        })
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, BackendError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| BackendError::Transcript {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_transcript(path: &Path, entries: &[TranscriptEntry]) -> Result<(), BackendError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Sliding-window limiter: at most `capacity` acquisitions in any `window`.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        Self::new(requests as usize, Duration::from_secs(60))
    }

    pub fn new(capacity: usize, window: Duration) -> Self {
        Self {
            capacity: capacity.max(1),
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a slot is free, then records the acquisition time.
    pub fn acquire(&self) -> Instant {
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                while issued.front().is_some_and(|&t| now.duration_since(t) >= self.window) {
                    issued.pop_front();
                }
                if issued.len() < self.capacity {
                    issued.push_back(now);
                    return now;
                }
                self.window - now.duration_since(*issued.front().expect("non-empty at capacity"))
            };
            std::thread::sleep(wait);
        }
    }
}

/// Counting semaphore bounding concurrent requests to one backend.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

struct InFlightGuard<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            count: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn enter(&self) -> InFlightGuard<'_> {
        let mut n = self.count.lock().expect("in-flight counter poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight counter poisoned");
        }
        *n += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().expect("in-flight counter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

/// HTTP plumbing shared by the chat and prediction clients.
struct HttpCore {
    config: BackendConfig,
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
    in_flight: InFlight,
}

impl HttpCore {
    fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let var = config.auth_env_var.clone().unwrap_or_default();
        let api_key = std::env::var(&var).map_err(|_| BackendError::MissingAuth(var.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config {
                backend: config.id.clone(),
                message: e.to_string(),
            })?;
        if config.sampling_temperature.is_some() && !config.temperature_supported {
            log::warn!(
                "backend '{}' does not accept a sampling temperature; ignoring it",
                config.id
            );
        }
        Ok(Self {
            endpoint: config.resolved_endpoint().unwrap_or_default(),
            limiter: config.requests_per_minute.map(RateLimiter::per_minute),
            in_flight: InFlight::new(config.max_in_flight),
            api_key,
            client,
            config,
        })
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<Value, Failure> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let resp = req
            .bearer_auth(&self.api_key)
            .send()
            .map_err(|e| Failure::Retryable(describe_reqwest(&e)))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status.is_client_error() {
            let body = resp.text().unwrap_or_default();
            return Err(Failure::Fatal(BackendError::Config {
                backend: self.config.id.clone(),
                message: format!("HTTP {status}: {}", truncate(&body, 300)),
            }));
        }
        resp.json::<Value>()
            .map_err(|e| Failure::Retryable(format!("malformed response body: {e}")))
    }

    /// Runs `op` with exponential backoff on retryable failures.
    fn with_retries<T>(&self, mut op: impl FnMut() -> Result<T, Failure>) -> Result<(T, u32), BackendError> {
        let _slot = self.in_flight.enter();
        let mut delay = Duration::from_millis(self.config.initial_backoff_ms);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Ok(v) => return Ok((v, attempt)),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) => {
                    if attempt > self.config.max_retries {
                        return Err(BackendError::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    log::debug!(
                        "backend '{}' attempt {attempt} failed ({message}); retrying in {delay:?}",
                        self.config.id
                    );
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(MAX_BACKOFF);
                }
            }
        }
    }
}

fn describe_reqwest(e: &reqwest::Error) -> String {
    if e.is_timeout() {
        "request timed out".into()
    } else if e.is_connect() {
        format!("connection failed: {e}")
    } else {
        e.to_string()
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn data_uri(png: &[u8]) -> String {
    format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    )
}

/// OpenAI-compatible chat completions.
pub struct HttpChatBackend {
    core: HttpCore,
}

impl HttpChatBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            core: HttpCore::new(config)?,
        })
    }

    pub fn request_body(config: &BackendConfig, prompt: &str, png: &[u8]) -> Value {
        let mut body = json!({
            "model": config.model_name.clone().unwrap_or_default(),
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": data_uri(png)}}
                ]
            }]
        });
        if let Some(t) = config.sampling_temperature.filter(|_| config.temperature_supported) {
            body["temperature"] = json!(t);
        }
        body
    }
}

/// First choice's message text; content may be a string or a list of parts.
pub fn extract_chat_answer(v: &Value) -> Option<String> {
    let content = v.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl VqaBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.core.config.id
    }

    fn query(&self, request: &QueryRequest<'_>) -> Result<RawResponse, BackendError> {
        check_png(request.png)?;
        let body = Self::request_body(&self.core.config, request.prompt_text, request.png);
        let start = Instant::now();
        let (text, attempts) = self.core.with_retries(|| {
            let v = self.core.send(self.core.client.post(&self.core.endpoint).json(&body))?;
            extract_chat_answer(&v)
                .ok_or_else(|| Failure::Retryable("response has no choices[0].message.content".into()))
        })?;
        Ok(RawResponse {
            text,
            latency_secs: start.elapsed().as_secs_f64(),
            attempt_count: attempts,
            backend_id: self.core.config.id.clone(),
        })
    }
}

/// Prediction APIs: create a prediction, then poll its status URL.
pub struct HttpPredictionBackend {
    core: HttpCore,
}

impl HttpPredictionBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            core: HttpCore::new(config)?,
        })
    }

    pub fn request_body(config: &BackendConfig, prompt: &str, png: &[u8]) -> Value {
        let mut input = serde_json::Map::new();
        input.insert(config.prompt_field.clone(), json!(prompt));
        input.insert("image".into(), json!(data_uri(png)));
        if let Some(t) = config.sampling_temperature.filter(|_| config.temperature_supported) {
            input.insert("temperature".into(), json!(t));
        }
        json!({ "input": input })
    }

    fn poll(&self, initial: Value, deadline: Instant) -> Result<String, Failure> {
        let mut current = initial;
        loop {
            let status = current.get("status").and_then(Value::as_str).unwrap_or("");
            match status {
                "succeeded" => {
                    return extract_prediction_output(&current)
                        .ok_or_else(|| Failure::Retryable("succeeded prediction has no output".into()))
                }
                "failed" | "canceled" => {
                    let err = current.get("error").map(Value::to_string).unwrap_or_default();
                    return Err(Failure::Retryable(format!("prediction {status}: {err}")));
                }
                _ => {}
            }
            if Instant::now() >= deadline {
                return Err(Failure::Retryable("prediction did not finish before timeout".into()));
            }
            let url = current
                .get("urls")
                .and_then(|u| u.get("get"))
                .and_then(Value::as_str)
                .ok_or_else(|| Failure::Retryable("prediction response has no status URL".into()))?
                .to_string();
            std::thread::sleep(Duration::from_millis(self.core.config.poll_interval_ms));
            current = self.core.send(self.core.client.get(&url))?;
        }
    }
}

/// Output may be a string or a list of streamed string chunks.
pub fn extract_prediction_output(v: &Value) -> Option<String> {
    match v.get("output")? {
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => Some(items.iter().filter_map(Value::as_str).collect::<String>()),
        _ => None,
    }
}

impl VqaBackend for HttpPredictionBackend {
    fn id(&self) -> &str {
        &self.core.config.id
    }

    fn query(&self, request: &QueryRequest<'_>) -> Result<RawResponse, BackendError> {
        check_png(request.png)?;
        let body = Self::request_body(&self.core.config, request.prompt_text, request.png);
        let start = Instant::now();
        let timeout = Duration::from_secs_f64(self.core.config.timeout_secs);
        let (text, attempts) = self.core.with_retries(|| {
            let created = self.core.send(self.core.client.post(&self.core.endpoint).json(&body))?;
            self.poll(created, Instant::now() + timeout)
        })?;
        Ok(RawResponse {
            text,
            latency_secs: start.elapsed().as_secs_f64(),
            attempt_count: attempts,
            backend_id: self.core.config.id.clone(),
        })
    }
}
