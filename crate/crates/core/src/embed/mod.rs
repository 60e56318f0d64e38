//! Query and frame embeddings from precomputed files or a remote service.

mod cache;
mod http;
mod qfeb;

use std::path::PathBuf;

use thiserror::Error;

pub use cache::{cache_key, EmbeddingCache};
pub use http::{EncodedImage, HealthInfo, HttpProvider, ProviderEndpoint, RetryPolicy};
pub use qfeb::{load_embedding_file, read_embedding_matrix, write_embedding_file, write_embedding_matrix, FLAG_NORMALIZED, HEADER_LEN, MAGIC, VERSION};

use crate::cqr::{EmbeddingMatrix, QueryEmbedding};

/// Vectors with an L2 norm below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector{}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    ZeroVector { row: Option<usize> },
    #[error("embedding dimension is zero")]
    DimZero,
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error("bad magic {0:?}, not an embedding file")]
    BadMagic([u8; 4]),
    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u16),
    #[error("payload is {found} bytes but header declares {expected}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("I/O failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("HTTP request to {url} failed{}: {message}", status.map(|s| format!(" with status {s}")).unwrap_or_default())]
    HttpFailure {
        url: String,
        status: Option<u16>,
        message: String,
    },
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("malformed response from {url}: {message}")]
    MalformedResponse { url: String, message: String },
    #[error("batch {batch} of {batches} failed: {source}")]
    PartialBatchFailure {
        batch: usize,
        batches: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("image encoding failed: {0}")]
    ImageEncoding(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("no frames to embed")]
    NoFrames,
}

impl EmbedError {
    pub(crate) fn at_row(self, row: usize) -> Self {
        match self {
            EmbedError::ZeroVector { .. } => EmbedError::ZeroVector { row: Some(row) },
            other => other,
        }
    }

    /// Whether the error came from talking to the remote service.
    pub fn is_provider_error(&self) -> bool {
        match self {
            EmbedError::HttpFailure { .. }
            | EmbedError::Timeout { .. }
            | EmbedError::MalformedResponse { .. }
            | EmbedError::InvalidEndpoint(_) => true,
            EmbedError::PartialBatchFailure { source, .. } => source.is_provider_error(),
            _ => false,
        }
    }
}

/// `v / ||v||`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>, EmbedError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite { row: 0 });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < MIN_NORM {
        return Err(EmbedError::ZeroVector { row: None });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// [`normalize`] for single-precision storage; the norm is accumulated in
/// f64 and the result rounded once.
pub fn normalize_f32(v: &[f32]) -> Result<Vec<f32>, EmbedError> {
    let wide: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
    Ok(normalize(&wide)?.into_iter().map(|x| x as f32).collect())
}

/// A text embedding plus whether the service had to cut the query short.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub embedding: QueryEmbedding,
    pub truncated: bool,
}

/// Anything that can embed a query and a batch of frames.
pub trait EmbeddingProvider {
    fn embed_text(&self, query: &str) -> Result<TextEmbedding, EmbedError>;
    fn embed_frames(&self, frames: &[EncodedImage]) -> Result<EmbeddingMatrix, EmbedError>;
}
