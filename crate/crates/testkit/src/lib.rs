//! A small, deterministic embedding service speaking the qframe HTTP
//! protocol, for tests and demos.
//!
//! Image embeddings are `[mean_r, mean_g, mean_b, 0.05]` with channel means
//! in `[0, 1]`. Text embeddings count color keywords: each of `red`, `green`
//! and `blue` adds to its channel, `bright` or `white` adds to all three,
//! and the last component is `0.1`. Text without keywords embeds as
//! `[0, 0, 0, 1]`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::runtime::Runtime;
use tokio::sync::oneshot;

pub const DIM: usize = 4;

/// Behaviour knobs, including deliberate failures.
#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub model: String,
    pub preferred_image_size: Option<u32>,
    /// Reject image batches larger than this with 413.
    pub max_batch: Option<usize>,
    /// Answer the first `n` POSTs with `fail_status`.
    pub fail_first: usize,
    /// Answer every POST with `fail_status`.
    pub always_fail: bool,
    pub fail_status: u16,
    /// Fail the image request with this 0-based arrival number.
    pub fail_image_batch: Option<usize>,
    /// Queries longer than this many characters are reported truncated.
    pub truncate_chars: usize,
    /// Report this `dim` instead of the real one.
    pub reported_dim: Option<usize>,
    /// Sleep before answering a POST.
    pub delay: Duration,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            model: "fixture-rgb".into(),
            preferred_image_size: None,
            max_batch: None,
            fail_first: 0,
            always_fail: false,
            fail_status: 500,
            fail_image_batch: None,
            truncate_chars: 77,
            reported_dim: None,
            delay: Duration::ZERO,
        }
    }
}

/// Request counters.
#[derive(Debug, Default)]
pub struct Stats {
    pub posts: AtomicUsize,
    pub text_requests: AtomicUsize,
    pub image_requests: AtomicUsize,
    pub health_requests: AtomicUsize,
    pub image_batch_sizes: Mutex<Vec<usize>>,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
}

impl Stats {
    pub fn posts(&self) -> usize {
        self.posts.load(Ordering::SeqCst)
    }

    pub fn image_requests(&self) -> usize {
        self.image_requests.load(Ordering::SeqCst)
    }

    pub fn text_requests(&self) -> usize {
        self.text_requests.load(Ordering::SeqCst)
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.image_batch_sizes.lock().unwrap().clone()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

struct AppState {
    config: FixtureConfig,
    stats: Arc<Stats>,
}

/// A running service on a loopback port. Stops when dropped.
pub struct FixtureService {
    addr: SocketAddr,
    stats: Arc<Stats>,
    shutdown: Option<oneshot::Sender<()>>,
    runtime: Option<Runtime>,
}

impl FixtureService {
    pub fn start() -> Self {
        Self::with_config(FixtureConfig::default())
    }

    pub fn with_config(config: FixtureConfig) -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .expect("tokio runtime");
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        std_listener.set_nonblocking(true).expect("nonblocking listener");
        let addr = std_listener.local_addr().expect("local addr");
        let stats = Arc::new(Stats::default());
        let state = Arc::new(AppState {
            config,
            stats: stats.clone(),
        });
        let app = Router::new()
            .route("/v1/health", get(health))
            .route("/v1/embed_text", post(embed_text))
            .route("/v1/embed_images", post(embed_images))
            .with_state(state);
        let (tx, rx) = oneshot::channel::<()>();
        runtime.spawn(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener).expect("tokio listener");
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .expect("fixture server");
        });
        Self {
            addr,
            stats,
            shutdown: Some(tx),
            runtime: Some(runtime),
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }
}

impl Drop for FixtureService {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

/// Keyword embedding of `text`, before normalization.
pub fn text_vector(text: &str) -> [f32; DIM] {
    let mut v = [0.0f32; DIM];
    let mut hit = false;
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        match word.to_ascii_lowercase().as_str() {
            "red" => v[0] += 1.0,
            "green" => v[1] += 1.0,
            "blue" => v[2] += 1.0,
            "bright" | "white" => {
                for c in &mut v[..3] {
                    *c += 1.0;
                }
            }
            _ => continue,
        }
        hit = true;
    }
    if hit {
        v[3] = 0.1;
    } else {
        v[3] = 1.0;
    }
    v
}

/// Channel-mean embedding of an RGB image, before normalization.
pub fn image_vector(img: &image::RgbImage) -> [f32; DIM] {
    let n = f64::from(img.width()) * f64::from(img.height());
    let mut sums = [0.0f64; 3];
    for p in img.pixels() {
        for (sum, v) in sums.iter_mut().zip(p.0) {
            *sum += f64::from(v);
        }
    }
    let mean = |c: usize| (sums[c] / n / 255.0) as f32;
    [mean(0), mean(1), mean(2), 0.05]
}

fn normalized(v: [f32; DIM]) -> Vec<f32> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|x| (f64::from(*x) / norm) as f32).collect()
}

#[derive(Serialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
    dim: usize,
    model: String,
    truncated: Vec<bool>,
}

#[derive(Deserialize)]
struct TextRequest {
    texts: Vec<String>,
}

#[derive(Deserialize)]
struct ImageRequest {
    images_b64: Vec<String>,
    #[serde(default)]
    format: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

struct InFlight<'a>(&'a Stats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a Stats) -> Self {
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(stats)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Shared failure injection for POST routes.
async fn before_post(state: &AppState) -> Option<Response> {
    let n = state.stats.posts.fetch_add(1, Ordering::SeqCst);
    if !state.config.delay.is_zero() {
        tokio::time::sleep(state.config.delay).await;
    }
    if state.config.always_fail || n < state.config.fail_first {
        let status = StatusCode::from_u16(state.config.fail_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return Some(error(status, "injected failure"));
    }
    None
}

fn respond(state: &AppState, embeddings: Vec<Vec<f32>>, truncated: Vec<bool>) -> Response {
    Json(EmbedResponse {
        embeddings,
        dim: state.config.reported_dim.unwrap_or(DIM),
        model: state.config.model.clone(),
        truncated,
    })
    .into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    state.stats.health_requests.fetch_add(1, Ordering::SeqCst);
    let mut body = json!({
        "status": "ok",
        "dim": state.config.reported_dim.unwrap_or(DIM),
        "model": state.config.model,
    });
    if let Some(size) = state.config.preferred_image_size {
        body["preferred_image_size"] = json!(size);
    }
    Json(body).into_response()
}

async fn embed_text(State(state): State<Arc<AppState>>, Json(req): Json<TextRequest>) -> Response {
    let _guard = InFlight::enter(&state.stats);
    state.stats.text_requests.fetch_add(1, Ordering::SeqCst);
    if let Some(r) = before_post(&state).await {
        return r;
    }
    if req.texts.is_empty() {
        return error(StatusCode::BAD_REQUEST, "texts must not be empty");
    }
    let embeddings = req.texts.iter().map(|t| normalized(text_vector(t))).collect();
    let truncated = req
        .texts
        .iter()
        .map(|t| t.chars().count() > state.config.truncate_chars)
        .collect();
    respond(&state, embeddings, truncated)
}

async fn embed_images(State(state): State<Arc<AppState>>, Json(req): Json<ImageRequest>) -> Response {
    let _guard = InFlight::enter(&state.stats);
    let request_no = state.stats.image_requests.fetch_add(1, Ordering::SeqCst);
    state.stats.image_batch_sizes.lock().unwrap().push(req.images_b64.len());
    if let Some(r) = before_post(&state).await {
        return r;
    }
    if state.config.fail_image_batch == Some(request_no) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, "injected batch failure");
    }
    if req.images_b64.is_empty() {
        return error(StatusCode::BAD_REQUEST, "images_b64 must not be empty");
    }
    if let Some(max) = state.config.max_batch {
        if req.images_b64.len() > max {
            return error(StatusCode::PAYLOAD_TOO_LARGE, format!("batch of {} exceeds {max}", req.images_b64.len()));
        }
    }
    if let Some(f) = req.format.as_deref().filter(|f| *f != "png") {
        return error(StatusCode::BAD_REQUEST, format!("unsupported format {f}"));
    }
    let mut embeddings = Vec::with_capacity(req.images_b64.len());
    for (i, b64) in req.images_b64.iter().enumerate() {
        let decoded = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .ok()
            .and_then(|bytes| image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).ok());
        let Some(img) = decoded else {
            return error(StatusCode::BAD_REQUEST, format!("image {i} is not a decodable png"));
        };
        if let Some(max) = state.config.preferred_image_size {
            if img.width().max(img.height()) > max {
                return error(
                    StatusCode::BAD_REQUEST,
                    format!("image {i} is {}x{}, larger than {max}", img.width(), img.height()),
                );
            }
        }
        embeddings.push(normalized(image_vector(&img.to_rgb8())));
    }
    let n = embeddings.len();
    respond(&state, embeddings, vec![false; n])
}
