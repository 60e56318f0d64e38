//! Blocking client for the embedding service wire protocol.
//!
//! * `POST /v1/embed_text`   `{"texts": [..]}`
//! * `POST /v1/embed_images` `{"images_b64": [..], "format": "png"}`
//! * `GET  /v1/health`
//!
//! Both embed endpoints answer `{"embeddings": [[..]], "dim": n, "model": s,
//! "truncated": [..]}`; failures carry `{"error": s}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{EmbedError, EmbeddingProvider, TextEmbedding};
use crate::cqr::{EmbeddingMatrix, QueryEmbedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderEndpoint {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_batch: usize,
    pub model_hint: Option<String>,
    /// Concurrent batch requests.
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl ProviderEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: 30_000,
            max_batch: 32,
            model_hint: None,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }

    fn validate(&self) -> Result<(), EmbedError> {
        if self.base_url.trim().is_empty() {
            return Err(EmbedError::InvalidEndpoint("base_url is empty".into()));
        }
        if self.max_batch == 0 || self.max_in_flight == 0 || self.timeout_ms == 0 {
            return Err(EmbedError::InvalidEndpoint(
                "max_batch, max_in_flight and timeout_ms must be positive".into(),
            ));
        }
        Ok(())
    }

    fn url(&self, route: &str) -> String {
        format!("{}{route}", self.base_url.trim_end_matches('/'))
    }
}

/// A PNG-encoded frame ready to send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub png: Vec<u8>,
}

impl EncodedImage {
    pub fn from_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Self, EmbedError> {
        use image::ImageEncoder;
        let mut png = Vec::new();
        image::codecs::png::PngEncoder::new(&mut png)
            .write_image(rgb, width, height, image::ExtendedColorType::Rgb8)
            .map_err(|e| EmbedError::ImageEncoding(e.to_string()))?;
        Ok(Self { png })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HealthInfo {
    pub status: String,
    pub dim: usize,
    #[serde(default)]
    pub model: Option<String>,
    /// Longest image side the model wants, if it says.
    #[serde(default)]
    pub preferred_image_size: Option<u32>,
}

#[derive(Serialize)]
struct TextRequest<'a> {
    texts: &'a [&'a str],
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Serialize)]
struct ImageRequest<'a> {
    images_b64: Vec<String>,
    format: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
    dim: usize,
    #[serde(default)]
    #[allow(dead_code)]
    model: Option<String>,
    #[serde(default)]
    truncated: Vec<bool>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

pub struct HttpProvider {
    endpoint: ProviderEndpoint,
    client: Client,
}

impl HttpProvider {
    pub fn new(endpoint: ProviderEndpoint) -> Result<Self, EmbedError> {
        endpoint.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| EmbedError::InvalidEndpoint(e.to_string()))?;
        Ok(Self { endpoint, client })
    }

    pub fn endpoint(&self) -> &ProviderEndpoint {
        &self.endpoint
    }

    pub fn health(&self) -> Result<HealthInfo, EmbedError> {
        let url = self.endpoint.url("/v1/health");
        self.with_retries(&url, || self.client.get(&url).send())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, route: &str, body: &B) -> Result<T, EmbedError> {
        let url = self.endpoint.url(route);
        self.with_retries(&url, || self.client.post(&url).json(body).send())
    }

    /// Retries transport errors, 5xx and 429 with exponential backoff.
    fn with_retries<T: DeserializeOwned>(
        &self,
        url: &str,
        send: impl Fn() -> reqwest::Result<reqwest::blocking::Response>,
    ) -> Result<T, EmbedError> {
        let policy = self.endpoint.retry;
        let mut backoff = policy.initial_backoff;
        let mut attempt = 0;
        loop {
            let (err, retryable) = match send() {
                Ok(resp) if resp.status() == StatusCode::OK => {
                    return resp.json::<T>().map_err(|e| EmbedError::MalformedResponse {
                        url: url.to_string(),
                        message: e.to_string(),
                    });
                }
                Ok(resp) => {
                    let status = resp.status();
                    let message = resp
                        .text()
                        .ok()
                        .and_then(|t| serde_json::from_str::<ErrorBody>(&t).ok().map(|b| b.error).or(Some(t)))
                        .unwrap_or_default();
                    let retryable = status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
                    (
                        EmbedError::HttpFailure {
                            url: url.to_string(),
                            status: Some(status.as_u16()),
                            message,
                        },
                        retryable,
                    )
                }
                Err(e) if e.is_timeout() => (EmbedError::Timeout { url: url.to_string() }, true),
                Err(e) => (
                    EmbedError::HttpFailure {
                        url: url.to_string(),
                        status: None,
                        message: e.to_string(),
                    },
                    true,
                ),
            };
            if !retryable || attempt >= policy.max_retries {
                return Err(err);
            }
            attempt += 1;
            debug!(%url, attempt, error = %err, "retrying embedding request");
            thread::sleep(backoff);
            backoff *= 2;
        }
    }

    fn check_response(&self, url: &str, resp: &EmbedResponse, expected: usize) -> Result<(), EmbedError> {
        let malformed = |message: String| EmbedError::MalformedResponse {
            url: url.to_string(),
            message,
        };
        if resp.dim == 0 || resp.embeddings.iter().any(|v| v.is_empty()) {
            return Err(EmbedError::DimZero);
        }
        if resp.embeddings.len() != expected {
            return Err(malformed(format!(
                "expected {expected} embeddings, got {}",
                resp.embeddings.len()
            )));
        }
        if let Some(v) = resp.embeddings.iter().find(|v| v.len() != resp.dim) {
            return Err(malformed(format!(
                "declared dim {} but a vector has {} values",
                resp.dim,
                v.len()
            )));
        }
        Ok(())
    }

    fn embed_batch(&self, batch: &[EncodedImage]) -> Result<EmbeddingMatrix, EmbedError> {
        let body = ImageRequest {
            images_b64: batch.iter().map(|img| BASE64.encode(&img.png)).collect(),
            format: "png",
            model: self.endpoint.model_hint.as_deref(),
        };
        let resp: EmbedResponse = self.post("/v1/embed_images", &body)?;
        self.check_response(&self.endpoint.url("/v1/embed_images"), &resp, batch.len())?;
        EmbeddingMatrix::from_rows(&resp.embeddings)
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed_text(&self, query: &str) -> Result<TextEmbedding, EmbedError> {
        if query.is_empty() {
            return Err(EmbedError::EmptyQuery);
        }
        let body = TextRequest {
            texts: &[query],
            model: self.endpoint.model_hint.as_deref(),
        };
        let resp: EmbedResponse = self.post("/v1/embed_text", &body)?;
        self.check_response(&self.endpoint.url("/v1/embed_text"), &resp, 1)?;
        let truncated = resp.truncated.first().copied().unwrap_or(false);
        if truncated {
            warn!("embedding service truncated the query");
        }
        Ok(TextEmbedding {
            embedding: QueryEmbedding::new(&resp.embeddings[0])?,
            truncated,
        })
    }

    /// Sends frames in batches of at most `max_batch`, up to
    /// `max_in_flight` at once, and reassembles rows in input order.
    fn embed_frames(&self, frames: &[EncodedImage]) -> Result<EmbeddingMatrix, EmbedError> {
        if frames.is_empty() {
            return Err(EmbedError::NoFrames);
        }
        let batches: Vec<&[EncodedImage]> = frames.chunks(self.endpoint.max_batch).collect();
        let n = batches.len();
        let results: Mutex<Vec<Option<Result<EmbeddingMatrix, EmbedError>>>> =
            Mutex::new((0..n).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.endpoint.max_in_flight.min(n);
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = self.embed_batch(batches[i]);
                    let failed = r.is_err();
                    results.lock().unwrap()[i] = Some(r);
                    if failed {
                        // Stop handing out new batches.
                        next.store(n, Ordering::Relaxed);
                    }
                });
            }
        });
        let mut rows: Vec<Vec<f32>> = Vec::with_capacity(frames.len());
        for (i, r) in results.into_inner().unwrap().into_iter().enumerate() {
            match r {
                Some(Ok(m)) => rows.extend(m.iter_rows().map(<[f32]>::to_vec)),
                Some(Err(e)) if n == 1 => return Err(e),
                Some(Err(e)) => {
                    return Err(EmbedError::PartialBatchFailure {
                        batch: i,
                        batches: n,
                        source: Box::new(e),
                    })
                }
                None => continue,
            }
        }
        EmbeddingMatrix::from_rows(&rows)
    }
}
