//! HTTP transport with live, recorded and recording implementations.
//!
//! Every outbound call goes through [`Transport`]. The live transport applies a
//! timeout, bounded retries with exponential backoff and a per-host rate limit.
//! The recorded transport replays response bodies from a [`RecordedStore`]
//! keyed by [`HttpRequest::digest`] and never touches the network.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Get => "GET",
            Method::Post => "POST",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
    /// Query parameters appended only when the request is sent live. They are
    /// excluded from the digest so recordings never depend on credentials.
    pub secret_query: Vec<(String, String)>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
            secret_query: Vec::new(),
        }
    }

    pub fn post_json(url: impl Into<String>, body: Vec<u8>) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            headers: vec![("content-type".into(), "application/json".into())],
            body: Some(body),
            secret_query: Vec::new(),
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    pub fn secret(mut self, name: &str, value: &str) -> Self {
        self.secret_query.push((name.to_string(), value.to_string()));
        self
    }

    /// Hex SHA-256 over `METHOD \n URL \n BODY`.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.method.to_string().as_bytes());
        h.update(b"\n");
        h.update(self.url.as_bytes());
        h.update(b"\n");
        if let Some(body) = &self.body {
            h.update(body);
        }
        hex::encode(h.finalize())
    }

    pub fn host(&self) -> String {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request to {url} timed out after {attempts} attempt(s)")]
    Timeout { url: String, attempts: u32 },

    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Connect {
        url: String,
        attempts: u32,
        message: String,
    },

    #[error("{url} answered HTTP {status} after {attempts} attempt(s)")]
    Status {
        url: String,
        status: u16,
        attempts: u32,
        retryable: bool,
    },

    #[error("no recorded response for {url} (digest {digest})")]
    NotRecorded { url: String, digest: String },

    #[error("recorded store error: {0}")]
    Store(String),
}

impl TransportError {
    pub fn attempts(&self) -> u32 {
        match self {
            Self::Timeout { attempts, .. }
            | Self::Connect { attempts, .. }
            | Self::Status { attempts, .. } => *attempts,
            Self::NotRecorded { .. } | Self::Store(_) => 0,
        }
    }

    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Timeout { .. } | Self::Connect { .. } => true,
            Self::Status { retryable, .. } => *retryable,
            Self::NotRecorded { .. } | Self::Store(_) => false,
        }
    }

    pub fn is_not_recorded(&self) -> bool {
        matches!(self, Self::NotRecorded { .. })
    }
}

fn retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

#[async_trait]
pub trait Transport: Send + Sync {
    /// Performs the request. Only 2xx responses are `Ok`.
    async fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;

    /// True when the transport never reaches the network.
    fn is_offline(&self) -> bool;

    /// Cheap reachability check. Offline transports always report `false`.
    async fn probe(&self, _url: &str) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkMode {
    /// Replay from the recorded store only.
    #[default]
    Offline,
    Live,
    /// Live requests whose responses are written to the recorded store.
    Record,
}

impl std::str::FromStr for NetworkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "offline" => Ok(Self::Offline),
            "live" => Ok(Self::Live),
            "record" => Ok(Self::Record),
            other => Err(format!("unknown network mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LiveSettings {
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// Requests per second per host; `0` disables the limit.
    pub rate_per_host: f64,
    pub user_agent: String,
}

impl Default for LiveSettings {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
            rate_per_host: 2.0,
            user_agent: concat!("geowine/", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

/// Spaces requests to the same host at least `1 / rate` seconds apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        let interval = (rate_per_sec > 0.0).then(|| Duration::from_secs_f64(1.0 / rate_per_sec));
        Self {
            interval,
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    /// Reserves the next slot for `host` and returns how long to wait for it.
    pub fn reserve(&self, host: &str) -> Duration {
        let Some(interval) = self.interval else {
            return Duration::ZERO;
        };
        let now = Instant::now();
        let mut slots = self.next_slot.lock().expect("rate limiter poisoned");
        let slot = slots.get(host).copied().filter(|t| *t > now).unwrap_or(now);
        slots.insert(host.to_string(), slot + interval);
        slot - now
    }

    pub async fn acquire(&self, host: &str) {
        let wait = self.reserve(host);
        if !wait.is_zero() {
            tokio::time::sleep(wait).await;
        }
    }
}

pub struct LiveTransport {
    client: reqwest::Client,
    settings: LiveSettings,
    limiter: RateLimiter,
}

impl LiveTransport {
    pub fn new(settings: LiveSettings) -> Result<Self, TransportError> {
        let client = reqwest::Client::builder()
            .timeout(settings.timeout)
            .user_agent(settings.user_agent.clone())
            .build()
            .map_err(|e| TransportError::Connect {
                url: String::new(),
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            limiter: RateLimiter::new(settings.rate_per_host),
            settings,
        })
    }

    async fn attempt(&self, req: &HttpRequest, attempts: u32) -> Result<HttpResponse, TransportError> {
        let mut url = url::Url::parse(&req.url).map_err(|e| TransportError::Connect {
            url: req.url.clone(),
            attempts,
            message: e.to_string(),
        })?;
        if !req.secret_query.is_empty() {
            url.query_pairs_mut().extend_pairs(req.secret_query.iter());
        }
        let mut builder = match req.method {
            Method::Get => self.client.get(url),
            Method::Post => self.client.post(url),
        };
        for (k, v) in &req.headers {
            builder = builder.header(k, v);
        }
        if let Some(body) = &req.body {
            builder = builder.body(body.clone());
        }
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout {
                    url: req.url.clone(),
                    attempts,
                }
            } else {
                TransportError::Connect {
                    url: req.url.clone(),
                    attempts,
                    message: e.to_string(),
                }
            }
        };
        let resp = builder.send().await.map_err(classify)?;
        let status = resp.status().as_u16();
        let body = resp.bytes().await.map_err(classify)?.to_vec();
        if (200..300).contains(&status) {
            Ok(HttpResponse { status, body })
        } else {
            Err(TransportError::Status {
                url: req.url.clone(),
                status,
                attempts,
                retryable: retryable_status(status),
            })
        }
    }
}

#[async_trait]
impl Transport for LiveTransport {
    async fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let host = req.host();
        let mut attempts = 0;
        loop {
            attempts += 1;
            self.limiter.acquire(&host).await;
            debug!(method = %req.method, url = %req.url, attempts, "http request");
            match self.attempt(req, attempts).await {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() && attempts <= self.settings.max_retries => {
                    let delay = self.settings.backoff_base * 2u32.pow(attempts - 1);
                    warn!(error = %e, ?delay, "retrying request");
                    tokio::time::sleep(delay).await;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn is_offline(&self) -> bool {
        false
    }

    async fn probe(&self, url: &str) -> bool {
        self.client
            .get(url)
            .timeout(Duration::from_secs(3))
            .send()
            .await
            .is_ok()
    }
}

/// Directory of recorded response bodies named by request digest.
///
/// `<digest>` holds the verbatim body. An optional `<digest>.status` holds a
/// non-200 status code, and `<digest>.request` describes the request for
/// humans browsing the store.
#[derive(Debug, Clone)]
pub struct RecordedStore {
    dir: PathBuf,
}

impl RecordedStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn lookup(&self, req: &HttpRequest) -> Result<Option<HttpResponse>, TransportError> {
        let digest = req.digest();
        let body_path = self.dir.join(&digest);
        let body = match std::fs::read(&body_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(TransportError::Store(format!("{}: {e}", body_path.display()))),
        };
        let status = match std::fs::read_to_string(self.dir.join(format!("{digest}.status"))) {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| TransportError::Store(format!("bad status file for {digest}")))?,
            Err(_) => 200,
        };
        Ok(Some(HttpResponse { status, body }))
    }

    pub fn record(&self, req: &HttpRequest, resp: &HttpResponse) -> Result<String, TransportError> {
        let store_err = |e: std::io::Error| TransportError::Store(e.to_string());
        std::fs::create_dir_all(&self.dir).map_err(store_err)?;
        let digest = req.digest();
        std::fs::write(self.dir.join(&digest), &resp.body).map_err(store_err)?;
        let status_path = self.dir.join(format!("{digest}.status"));
        if resp.status == 200 {
            let _ = std::fs::remove_file(status_path);
        } else {
            std::fs::write(status_path, format!("{}\n", resp.status)).map_err(store_err)?;
        }
        let mut meta = format!("{} {}\n", req.method, req.url);
        if let Some(body) = &req.body {
            meta.push('\n');
            meta.push_str(&String::from_utf8_lossy(body));
            meta.push('\n');
        }
        std::fs::write(self.dir.join(format!("{digest}.request")), meta).map_err(store_err)?;
        Ok(digest)
    }
}

fn replay(req: &HttpRequest, resp: HttpResponse) -> Result<HttpResponse, TransportError> {
    if (200..300).contains(&resp.status) {
        Ok(resp)
    } else {
        Err(TransportError::Status {
            url: req.url.clone(),
            status: resp.status,
            attempts: 1,
            retryable: retryable_status(resp.status),
        })
    }
}

/// Replays recorded responses; unknown requests fail with
/// [`TransportError::NotRecorded`].
pub struct RecordedTransport {
    store: RecordedStore,
}

impl RecordedTransport {
    pub fn new(store: RecordedStore) -> Self {
        Self { store }
    }
}

#[async_trait]
impl Transport for RecordedTransport {
    async fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        match self.store.lookup(req)? {
            Some(resp) => replay(req, resp),
            None => Err(TransportError::NotRecorded {
                url: req.url.clone(),
                digest: req.digest(),
            }),
        }
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Sends requests live and writes every response (including HTTP errors) to
/// the store.
pub struct RecordingTransport {
    live: LiveTransport,
    store: RecordedStore,
}

impl RecordingTransport {
    pub fn new(live: LiveTransport, store: RecordedStore) -> Self {
        Self { live, store }
    }
}

#[async_trait]
impl Transport for RecordingTransport {
    async fn execute(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        match self.live.execute(req).await {
            Ok(resp) => {
                self.store.record(req, &resp)?;
                Ok(resp)
            }
            Err(TransportError::Status { status, .. }) if !retryable_status(status) => {
                let resp = HttpResponse {
                    status,
                    body: Vec::new(),
                };
                self.store.record(req, &resp)?;
                replay(req, resp)
            }
            Err(e) => Err(e),
        }
    }

    fn is_offline(&self) -> bool {
        false
    }

    async fn probe(&self, url: &str) -> bool {
        self.live.probe(url).await
    }
}

/// Builds the transport for a network mode.
pub fn build_transport(
    mode: NetworkMode,
    store_dir: impl Into<PathBuf>,
    settings: LiveSettings,
) -> Result<Arc<dyn Transport>, TransportError> {
    let store = RecordedStore::new(store_dir);
    Ok(match mode {
        NetworkMode::Offline => Arc::new(RecordedTransport::new(store)),
        NetworkMode::Live => Arc::new(LiveTransport::new(settings)?),
        NetworkMode::Record => Arc::new(RecordingTransport::new(LiveTransport::new(settings)?, store)),
    })
}
