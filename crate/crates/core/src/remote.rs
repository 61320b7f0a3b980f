//! Blocking JSON-over-HTTP client shared by the remote providers.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("POST {url}: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("POST {url}: HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("POST {url}: malformed response: {message}")]
    Shape { url: String, message: String },
}

/// Counting semaphore bounding concurrent requests to one endpoint.
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub(crate) struct JsonClient {
    endpoint: String,
    http: reqwest::blocking::Client,
    limiter: Limiter,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("endpoint", &self.endpoint).finish()
    }
}

impl JsonClient {
    /// Must not be called from inside an async runtime.
    pub(crate) fn new(endpoint: &str, max_in_flight: usize) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client construction");
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            http,
            limiter: Limiter {
                available: Mutex::new(max_in_flight.max(1)),
                freed: Condvar::new(),
            },
        }
    }

    pub(crate) fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub(crate) fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint, path)
    }

    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, RemoteError> {
        let url = self.url(path);
        let _permit = self.limiter.acquire();
        let response = self
            .http
            .post(&url)
            .json(body)
            .send()
            .map_err(|source| RemoteError::Transport { url: url.clone(), source })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(RemoteError::Status { url, status: status.as_u16(), body });
        }
        let bytes = response
            .bytes()
            .map_err(|source| RemoteError::Transport { url: url.clone(), source })?;
        serde_json::from_slice(&bytes).map_err(|e| RemoteError::Shape { url, message: e.to_string() })
    }

    pub(crate) fn shape_error(&self, path: &str, message: impl Into<String>) -> RemoteError {
        RemoteError::Shape { url: self.url(path), message: message.into() }
    }
}
