//! Generation-client contract, the deterministic mock, and the HTTP client.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{KaftError, Result};

/// Environment variable consulted when no endpoint is configured.
pub const ENDPOINT_ENV: &str = "KAFT_MODEL_ENDPOINT";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
    pub model_tag: String,
}

impl GenRequest {
    pub fn new(prompt: impl Into<String>, max_tokens: u32, model_tag: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens,
            stop_sequences: vec!["\n".into()],
            model_tag: model_tag.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(KaftError::Config("prompt must be non-empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(KaftError::Config("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_by: Option<String>,
}

/// The single boundary to text-generation models. Errors are never silent
/// empty text: callers treat every error as "example skipped".
pub trait GenerationClient: Send + Sync {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Strict lookup: the whole prompt must be a table key.
    Exact,
    /// Longest table key contained anywhere in the prompt wins; useful for
    /// keying canned completions by the target question inside a few-shot
    /// prompt.
    Substring,
}

/// Serializable completion table backing [`MockClient`] and the stub server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockTable {
    pub mode: MockMode,
    pub entries: BTreeMap<String, String>,
}

impl MockTable {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| KaftError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| KaftError::Config(format!("bad mock table {}: {e}", path.display())))
    }

    /// Resolve a prompt to a completion, or a protocol error on a miss.
    pub fn lookup(&self, prompt: &str) -> Result<String> {
        let hit = match self.mode {
            MockMode::Exact => self.entries.get(prompt).cloned(),
            MockMode::Substring => self
                .entries
                .iter()
                .filter(|(k, _)| prompt.contains(k.as_str()))
                .max_by_key(|(k, _)| k.len())
                .map(|(_, v)| v.clone()),
        };
        hit.ok_or_else(|| {
            KaftError::Protocol(format!(
                "mock table has no entry for prompt starting {:?}",
                prompt.chars().take(60).collect::<String>()
            ))
        })
    }
}

/// Deterministic in-memory client: identical requests always yield
/// byte-identical responses.
#[derive(Debug, Clone)]
pub struct MockClient {
    table: MockTable,
}

impl MockClient {
    /// Strict exact-lookup mock.
    pub fn exact(entries: BTreeMap<String, String>) -> Self {
        Self {
            table: MockTable {
                mode: MockMode::Exact,
                entries,
            },
        }
    }

    pub fn substring(entries: BTreeMap<String, String>) -> Self {
        Self {
            table: MockTable {
                mode: MockMode::Substring,
                entries,
            },
        }
    }

    pub fn from_table(table: MockTable) -> Self {
        Self { table }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(Self::from_table(MockTable::from_path(path)?))
    }
}

impl GenerationClient for MockClient {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse> {
        request.validate()?;
        Ok(GenResponse {
            text: self.table.lookup(&request.prompt)?,
            truncated_by: None,
        })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// Blocking HTTP client for the `/generate` protocol with retry on
/// transport-level failures and 5xx responses.
pub struct HttpClient {
    endpoint: String,
    http: reqwest::blocking::Client,
    attempts: u32,
    backoff: Duration,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        Self::with_policy(endpoint, 3, Duration::from_millis(500), Duration::from_secs(30))
    }

    pub fn with_policy(
        endpoint: impl Into<String>,
        attempts: u32,
        backoff: Duration,
        timeout: Duration,
    ) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| KaftError::Config(format!("http client: {e}")))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            http,
            attempts: attempts.max(1),
            backoff,
        })
    }

    fn attempt(&self, request: &GenRequest) -> Result<GenResponse> {
        let url = format!("{}/generate", self.endpoint);
        let wire = WireRequest {
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            stop: &request.stop_sequences,
        };
        let response = self.http.post(&url).json(&wire).send().map_err(|e| {
            if e.is_timeout() {
                KaftError::Timeout(format!("{url}: {e}"))
            } else {
                KaftError::Transport(format!("{url}: {e}"))
            }
        })?;
        let status = response.status();
        if status.is_server_error() {
            return Err(KaftError::Transport(format!("{url}: status {status}")));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(KaftError::Protocol(format!("{url}: status {status}: {body}")));
        }
        let body: WireResponse = response
            .json()
            .map_err(|e| KaftError::Protocol(format!("{url}: malformed body: {e}")))?;
        Ok(GenResponse {
            text: body.text,
            truncated_by: None,
        })
    }
}

impl GenerationClient for HttpClient {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse> {
        request.validate()?;
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 0..self.attempts {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(e @ (KaftError::Transport(_) | KaftError::Timeout(_))) => {
                    last = Some(e);
                    if attempt + 1 < self.attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Build a client from an endpoint designator:
/// `mock:<table.json>` for the deterministic mock, `http(s)://...` for the
/// wire client. Empty designators fall back to `KAFT_MODEL_ENDPOINT`.
pub fn client_from_endpoint(endpoint: &str) -> Result<Box<dyn GenerationClient>> {
    let resolved = if endpoint.is_empty() {
        std::env::var(ENDPOINT_ENV)
            .map_err(|_| KaftError::Config(format!("no endpoint given and {ENDPOINT_ENV} unset")))?
    } else {
        endpoint.to_string()
    };
    if let Some(path) = resolved.strip_prefix("mock:") {
        return Ok(Box::new(MockClient::from_path(Path::new(path))?));
    }
    if resolved.starts_with("http://") || resolved.starts_with("https://") {
        return Ok(Box::new(HttpClient::new(resolved)?));
    }
    Err(KaftError::Config(format!(
        "endpoint must be mock:<path> or http(s)://..., got {resolved:?}"
    )))
}

/// Fan requests out over up to `max_in_flight` threads, preserving input
/// order in the result vector.
pub fn generate_bulk(
    client: &dyn GenerationClient,
    requests: &[GenRequest],
    max_in_flight: usize,
) -> Vec<Result<GenResponse>> {
    let width = max_in_flight.max(1);
    let mut results = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(width) {
        let mut chunk_results: Vec<Option<Result<GenResponse>>> =
            (0..chunk.len()).map(|_| None).collect();
        thread::scope(|scope| {
            for (slot, request) in chunk_results.iter_mut().zip(chunk) {
                scope.spawn(move || {
                    *slot = Some(client.generate(request));
                });
            }
        });
        results.extend(chunk_results.into_iter().map(|r| r.expect("thread completed")));
    }
    results
}
