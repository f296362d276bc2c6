//! Provider gateway: a single blocking `send` contract over interchangeable
//! transports, with retries, rate limiting, and a content-addressed
//! record/replay cache that makes runs deterministic and resumable.

pub mod cache;
pub mod transport;

use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{Cache, CacheError, CacheRecord, RequestSnapshot};
pub use transport::{HttpTransport, MockTransport, Transport, TransportError};

/// Sampling controls sent to the provider. Defaults favor determinism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_output_tokens: 256,
        }
    }
}

/// Optional request origin, used by the scripted mock and diagnostics.
/// Deliberately excluded from the cache key.
#[derive(Debug, Clone)]
pub struct RequestTag {
    pub utterance_id: String,
    pub window_m: usize,
}

#[derive(Debug, Clone)]
pub struct ProviderRequest {
    pub provider_id: String,
    pub model_id: String,
    pub prompt_text: String,
    pub decoding: DecodingParams,
    pub tag: Option<RequestTag>,
}

impl ProviderRequest {
    pub fn cache_key(&self) -> String {
        cache_key(
            &self.provider_id,
            &self.model_id,
            &self.prompt_text,
            &self.decoding,
        )
    }

    fn snapshot(&self) -> RequestSnapshot {
        RequestSnapshot {
            provider_id: self.provider_id.clone(),
            model_id: self.model_id.clone(),
            prompt_text: self.prompt_text.clone(),
            decoding: self.decoding,
        }
    }
}

/// Content address of a request: SHA-256 over the canonical JSON form of
/// (provider, model, prompt, decoding). Stable across platforms and runs;
/// any single-byte prompt change produces a different key.
pub fn cache_key(
    provider_id: &str,
    model_id: &str,
    prompt_text: &str,
    decoding: &DecodingParams,
) -> String {
    let canonical = serde_json::to_string(&RequestSnapshot {
        provider_id: provider_id.into(),
        model_id: model_id.into(),
        prompt_text: prompt_text.into(),
        decoding: *decoding,
    })
    .expect("canonical request form serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

/// One completed request/response, with its origin metadata.
#[derive(Debug, Clone, Serialize)]
pub struct ProviderExchange {
    pub provider_id: String,
    pub model_id: String,
    pub prompt_text: String,
    pub decoding: DecodingParams,
    pub cache_key: String,
    pub raw_response: String,
    pub latency_ms: u64,
    /// Transport attempts consumed; 0 when served from cache.
    pub attempt_count: u32,
    pub timestamp_unix: u64,
    pub from_cache: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    /// Query the transport; no cache involvement.
    Live,
    /// Serve from cache when possible, otherwise query and persist.
    Record,
    /// Serve from cache only; misses are errors.
    Replay,
    /// Query the (expected mock) transport; no cache involvement.
    Mock,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("credential environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("replay cache has no entry for key {cache_key}")]
    CacheMiss { cache_key: String },
    #[error("provider request failed after {attempts} attempt(s): {message}")]
    Provider {
        status: Option<u16>,
        message: String,
        attempts: u32,
    },
    #[error("no scripted response for key `{key}`")]
    ScriptMissingKey { key: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("gateway error: {0}")]
    Internal(String),
}

/// Exponential backoff schedule for transient failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_attempts: u32,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay_ms: 1000,
            factor: 2.0,
            max_attempts: 5,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (so `attempt` starts at 1).
    fn delay(&self, attempt: u32) -> Duration {
        let exact = self.base_delay_ms as f64 * self.factor.powi(attempt as i32 - 1);
        let scaled = if self.jitter {
            exact * rand::thread_rng().gen_range(0.5..1.5)
        } else {
            exact
        };
        Duration::from_millis(scaled as u64)
    }
}

/// Spaces out request starts so at most `rps` begin per second.
pub struct RateLimiter {
    min_interval: Duration,
    last_start: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(rps: f64) -> Option<Self> {
        if rps <= 0.0 {
            return None;
        }
        Some(Self {
            min_interval: Duration::from_secs_f64(1.0 / rps),
            last_start: Mutex::new(None),
        })
    }

    /// Block until a new request may start, and claim that slot.
    pub fn acquire(&self) {
        let mut last = self.last_start.lock().expect("rate limiter lock");
        if let Some(previous) = *last {
            let next_allowed = previous + self.min_interval;
            let now = Instant::now();
            if next_allowed > now {
                std::thread::sleep(next_allowed - now);
            }
        }
        *last = Some(Instant::now());
    }
}

/// The uniform provider front end used by the runner.
pub struct Gateway {
    mode: GatewayMode,
    transport: Box<dyn Transport>,
    cache: Option<Cache>,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
}

impl Gateway {
    /// `cache` is required for record/replay modes and ignored otherwise;
    /// `rate_limit_rps <= 0` disables rate limiting, and the limiter only
    /// ever applies to transports that leave the process.
    pub fn new(
        mode: GatewayMode,
        transport: Box<dyn Transport>,
        cache: Option<Cache>,
        retry: RetryPolicy,
        rate_limit_rps: f64,
    ) -> Result<Self, GatewayError> {
        if matches!(mode, GatewayMode::Record | GatewayMode::Replay) && cache.is_none() {
            return Err(GatewayError::Internal(format!(
                "{mode:?} mode requires a cache file"
            )));
        }
        Ok(Self {
            mode,
            transport,
            cache,
            retry,
            limiter: RateLimiter::new(rate_limit_rps),
        })
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn cache(&self) -> Option<&Cache> {
        self.cache.as_ref()
    }

    pub fn send(&self, request: &ProviderRequest) -> Result<ProviderExchange, GatewayError> {
        let key = request.cache_key();
        match self.mode {
            GatewayMode::Replay => {
                let record = self
                    .cache
                    .as_ref()
                    .expect("checked at construction")
                    .get(&key)
                    .ok_or(GatewayError::CacheMiss {
                        cache_key: key.clone(),
                    })?;
                Ok(exchange_from_cache(request, record))
            }
            GatewayMode::Record => {
                let cache = self.cache.as_ref().expect("checked at construction");
                if let Some(record) = cache.get(&key) {
                    return Ok(exchange_from_cache(request, record));
                }
                let exchange = self.execute_with_retry(request, &key)?;
                cache.put(CacheRecord {
                    cache_key: key,
                    request: request.snapshot(),
                    raw_response: exchange.raw_response.clone(),
                    timestamp_unix: exchange.timestamp_unix,
                })?;
                Ok(exchange)
            }
            GatewayMode::Live | GatewayMode::Mock => self.execute_with_retry(request, &key),
        }
    }

    fn execute_with_retry(
        &self,
        request: &ProviderRequest,
        key: &str,
    ) -> Result<ProviderExchange, GatewayError> {
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                if self.transport.is_network() {
                    limiter.acquire();
                }
            }
            match self.transport.execute(request) {
                Ok(raw_response) => {
                    return Ok(ProviderExchange {
                        provider_id: request.provider_id.clone(),
                        model_id: request.model_id.clone(),
                        prompt_text: request.prompt_text.clone(),
                        decoding: request.decoding,
                        cache_key: key.to_string(),
                        raw_response,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempt,
                        timestamp_unix: unix_now(),
                        from_cache: false,
                    });
                }
                Err(TransportError::ScriptMiss { key }) => {
                    return Err(GatewayError::ScriptMissingKey { key });
                }
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.delay(attempt));
                }
                Err(e) => {
                    let status = match &e {
                        TransportError::Status { status, .. } => Some(*status),
                        _ => None,
                    };
                    return Err(GatewayError::Provider {
                        status,
                        message: e.to_string(),
                        attempts: attempt,
                    });
                }
            }
        }
    }
}

fn exchange_from_cache(request: &ProviderRequest, record: CacheRecord) -> ProviderExchange {
    ProviderExchange {
        provider_id: request.provider_id.clone(),
        model_id: request.model_id.clone(),
        prompt_text: request.prompt_text.clone(),
        decoding: request.decoding,
        cache_key: record.cache_key,
        raw_response: record.raw_response,
        latency_ms: 0,
        attempt_count: 0,
        timestamp_unix: record.timestamp_unix,
        from_cache: true,
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_keys_are_stable_and_sensitive() {
        let d = DecodingParams::default();
        let a = cache_key("prov", "model", "prompt text", &d);
        let b = cache_key("prov", "model", "prompt text", &d);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);

        assert_ne!(a, cache_key("prov", "model", "prompt  text", &d));
        let warmer = DecodingParams {
            temperature: 0.5,
            ..DecodingParams::default()
        };
        assert_ne!(a, cache_key("prov", "model", "prompt text", &warmer));
        assert_ne!(a, cache_key("prov", "other-model", "prompt text", &d));
    }

    #[test]
    fn retry_delays_grow_exponentially_without_jitter() {
        let policy = RetryPolicy {
            base_delay_ms: 100,
            factor: 2.0,
            max_attempts: 5,
            jitter: false,
        };
        assert_eq!(policy.delay(1), Duration::from_millis(100));
        assert_eq!(policy.delay(2), Duration::from_millis(200));
        assert_eq!(policy.delay(3), Duration::from_millis(400));
    }

    #[test]
    fn rate_limiter_disabled_for_nonpositive_rates() {
        assert!(RateLimiter::new(0.0).is_none());
        assert!(RateLimiter::new(-1.0).is_none());
        assert!(RateLimiter::new(2.0).is_some());
    }
}
