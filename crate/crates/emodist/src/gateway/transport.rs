//! Transport implementations: a real HTTP provider client and a scriptable
//! deterministic mock.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::label::LabelSpace;

use super::{DecodingParams, ProviderRequest};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("no scripted response for key `{key}`")]
    ScriptMiss { key: String },
}

impl TransportError {
    /// Transient failures are retried: timeouts, connection problems, rate
    /// limiting (429), and server errors (5xx). Other client errors and
    /// script misses fail fast.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout(_) | TransportError::Network(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::ScriptMiss { .. } => false,
        }
    }
}

/// A blocking single-request provider channel.
pub trait Transport: Send + Sync {
    fn execute(&self, request: &ProviderRequest) -> Result<String, TransportError>;
    /// Whether requests leave the process (drives rate limiting).
    fn is_network(&self) -> bool;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn execute(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        (**self).execute(request)
    }

    fn is_network(&self) -> bool {
        (**self).is_network()
    }
}

/// Generative-API HTTP transport. The credential is read from an environment
/// variable at construction and sent as a request header; it is never logged
/// or embedded in URLs.
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    /// `endpoint_template` may contain `{model}`, substituted per request.
    pub fn new(
        endpoint_template: impl Into<String>,
        api_key_env: &str,
        timeout: Duration,
    ) -> Result<Self, super::GatewayError> {
        let api_key = std::env::var(api_key_env)
            .map_err(|_| super::GatewayError::MissingCredential(api_key_env.to_string()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| super::GatewayError::Internal(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint_template.into(),
            api_key,
            client,
        })
    }
}

#[derive(Deserialize)]
struct GenerateResponse {
    candidates: Option<Vec<Candidate>>,
}

#[derive(Deserialize)]
struct Candidate {
    content: Option<CandidateContent>,
}

#[derive(Deserialize)]
struct CandidateContent {
    parts: Option<Vec<Part>>,
}

#[derive(Deserialize)]
struct Part {
    text: Option<String>,
}

impl Transport for HttpTransport {
    fn execute(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        let url = self.endpoint.replace("{model}", &request.model_id);
        let DecodingParams {
            temperature,
            top_p,
            max_output_tokens,
        } = request.decoding;
        let body = serde_json::json!({
            "contents": [{"parts": [{"text": request.prompt_text}]}],
            "generationConfig": {
                "temperature": temperature,
                "topP": top_p,
                "maxOutputTokens": max_output_tokens,
            },
        });
        let response = self
            .client
            .post(&url)
            .header("x-goog-api-key", &self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout(e.to_string())
                } else {
                    TransportError::Network(e.to_string())
                }
            })?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: text });
        }
        let parsed: GenerateResponse = serde_json::from_str(&text)
            .map_err(|e| TransportError::Network(format!("unexpected provider payload: {e}")))?;
        let mut out = String::new();
        for candidate in parsed.candidates.unwrap_or_default() {
            for part in candidate.content.and_then(|c| c.parts).unwrap_or_default() {
                if let Some(t) = part.text {
                    out.push_str(&t);
                }
            }
        }
        Ok(out)
    }

    fn is_network(&self) -> bool {
        true
    }
}

/// Deterministic in-process transport. Scripted entries are looked up by
/// `utterance_id@window`, then bare `utterance_id`, then the full cache key;
/// unscripted requests synthesize a valid probability map seeded by the
/// cache key (or fail, in strict mode).
pub struct MockTransport {
    script: HashMap<String, String>,
    strict: bool,
    label_space: LabelSpace,
    calls: AtomicUsize,
}

impl MockTransport {
    pub fn new(label_space: LabelSpace) -> Self {
        Self {
            script: HashMap::new(),
            strict: false,
            label_space,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn scripted(
        label_space: LabelSpace,
        script: HashMap<String, String>,
        strict: bool,
    ) -> Self {
        Self {
            script,
            strict,
            label_space,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of `execute` calls served so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, request: &ProviderRequest, key: &str) -> Option<String> {
        if let Some(tag) = &request.tag {
            let scoped = format!("{}@{}", tag.utterance_id, tag.window_m);
            if let Some(r) = self.script.get(&scoped) {
                return Some(r.clone());
            }
            if let Some(r) = self.script.get(&tag.utterance_id) {
                return Some(r.clone());
            }
        }
        self.script.get(key).cloned()
    }
}

impl Transport for MockTransport {
    fn execute(&self, request: &ProviderRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = request.cache_key();
        if let Some(scripted) = self.lookup(request, &key) {
            return Ok(scripted);
        }
        if self.strict {
            return Err(TransportError::ScriptMiss { key });
        }
        Ok(synthesize_response(&key, &self.label_space))
    }

    fn is_network(&self) -> bool {
        false
    }
}

/// A pseudo-random but fully deterministic valid response for a cache key:
/// an integer composition of 100 rendered as two-decimal probabilities in
/// the constrained dictionary format.
pub fn synthesize_response(cache_key: &str, space: &LabelSpace) -> String {
    let mut seed_bytes = [0u8; 8];
    let raw = cache_key.as_bytes();
    for (i, b) in seed_bytes.iter_mut().enumerate() {
        *b = raw.get(i).copied().unwrap_or(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed_bytes));
    let k = space.len();
    let mut cuts: Vec<u32> = (0..k - 1).map(|_| rng.gen_range(0..=100)).collect();
    cuts.sort_unstable();
    cuts.push(100);
    let mut parts = Vec::with_capacity(k);
    let mut previous = 0;
    for cut in cuts {
        parts.push(cut - previous);
        previous = cut;
    }
    let inner: Vec<String> = space
        .labels()
        .zip(&parts)
        .map(|(label, hundredths)| format!("'{label}':{:.2}", *hundredths as f64 / 100.0))
        .collect();
    format!("{{{}}}", inner.join(", "))
}
