//! Shared plumbing for external model providers: error classification,
//! retry with exponential backoff, an in-flight request bound and a small
//! blocking HTTP JSON client.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    Unavailable(String),
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("invalid provider input: {0}")]
    InvalidInput(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("provider rejected the request: {0}")]
    Rejected(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Unavailable(_) | ProviderError::Timeout | ProviderError::EmptyCompletion
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(200) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { max_retries: 0, base_delay: Duration::ZERO }
    }

    /// Runs `op`, retrying retryable failures up to `max_retries` times with
    /// delays of `base_delay * 2^attempt`.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    let delay = self.base_delay.saturating_mul(1 << attempt.min(16));
                    tracing::debug!(attempt, ?delay, error = %e, "retrying provider call");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Counting semaphore bounding concurrent provider requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        InFlightLimit { max: max.max(1), current: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limit: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.current.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limit.freed.notify_one();
    }
}

/// POST-JSON endpoint of an external provider.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        Ok(HttpEndpoint { url: url.into(), api_key, client })
    }

    /// Reads `<prefix>_URL` and optional `<prefix>_API_KEY` from the environment.
    pub fn from_env(prefix: &'static str, url_var: &'static str, timeout: Duration) -> Result<Self, crate::config::ConfigError> {
        let url = std::env::var(url_var).map_err(|_| crate::config::ConfigError::MissingEndpoint(url_var))?;
        let key = std::env::var(format!("{prefix}_API_KEY")).ok();
        HttpEndpoint::new(url, key, timeout).map_err(|_| crate::config::ConfigError::MissingEndpoint(url_var))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ProviderError> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderError::Unavailable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Rejected(format!("HTTP {status}: {body}")));
        }
        resp.json::<Resp>().map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

fn classify(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else {
        ProviderError::Unavailable(e.to_string())
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn retries_only_retryable_errors() {
        let calls = AtomicUsize::new(0);
        let policy = RetryPolicy { max_retries: 3, base_delay: Duration::ZERO };
        let r: Result<(), _> = policy.run(|| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::Timeout)
        });
        assert_eq!(r, Err(ProviderError::Timeout));
        assert_eq!(calls.load(Ordering::SeqCst), 4);

        calls.store(0, Ordering::SeqCst);
        let r: Result<(), _> = policy.run(|| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(ProviderError::InvalidInput("x".into()))
        });
        assert!(r.is_err());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retry_recovers_after_transient_failure() {
        let calls = AtomicUsize::new(0);
        let policy = RetryPolicy { max_retries: 2, base_delay: Duration::ZERO };
        let r = policy.run(|| {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(ProviderError::Unavailable("down".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r, Ok(7));
    }

    #[test]
    fn in_flight_limit_bounds_concurrency() {
        let limit = Arc::new(InFlightLimit::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let limit = limit.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _p = limit.acquire();
                    peak.fetch_max(limit.in_flight(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limit.in_flight(), 0);
    }

    #[test]
    fn http_errors_are_classified() {
        let (url, _rx) = test_server::serve(vec![(503, "{}".into()), (400, "{\"e\":1}".into())]);
        let ep = HttpEndpoint::new(url, None, Duration::from_secs(5)).unwrap();
        let r: Result<serde_json::Value, _> = ep.post(&serde_json::json!({}));
        assert!(matches!(r, Err(ProviderError::Unavailable(_))));
        let r: Result<serde_json::Value, _> = ep.post(&serde_json::json!({}));
        assert!(matches!(r, Err(ProviderError::Rejected(_))));

        let dead = HttpEndpoint::new("http://127.0.0.1:1/", None, Duration::from_secs(1)).unwrap();
        let r: Result<serde_json::Value, _> = dead.post(&serde_json::json!({}));
        assert!(r.unwrap_err().is_retryable());
    }
}
