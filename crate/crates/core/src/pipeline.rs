//! End-to-end selection: probe, candidates, embeddings, scoring, sampling,
//! tier allocation, decode and output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tracing::{info, warn};

use crate::cqr::{similarity, uniform_candidate_indices, CqrError, EmbeddingMatrix, QueryEmbedding};
use crate::embed::{
    cache_key, load_embedding_file, write_embedding_file, EmbedError, EmbeddingCache, EmbeddingProvider,
    EncodedImage, HttpProvider, ProviderEndpoint,
};
use crate::model::{
    validate_config, ConfigError, Resolution, ScoredCandidates, SelectedFrame, SelectionConfig, SelectionResult,
    TierCounts, VideoMeta,
};
use crate::mra::{assign_tiers, clamp_to_candidates, token_cost, MraError, TierResolutions};
use crate::qfs::{rng_from_seed, sample_ranked, score_candidates, QfsError};
use crate::util::sha256_file;
use crate::video::{
    open_video, resize_rgb, write_outputs, DecodedFrame, Manifest, ManifestVideo, RunContext, VideoError,
    VideoSource, WallClock, MANIFEST_FILE,
};

/// Process exit status families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config,
    Io,
    Provider,
    Statistical,
}

impl ExitClass {
    pub fn code(self) -> i32 {
        match self {
            ExitClass::Config => 1,
            ExitClass::Io => 2,
            ExitClass::Provider => 3,
            ExitClass::Statistical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Similarity(#[from] CqrError),
    #[error(transparent)]
    Sampling(#[from] QfsError),
    #[error(transparent)]
    Allocation(#[from] MraError),
    #[error("embedding matrix has {found} rows but {expected} candidates were taken")]
    EmbeddingCount { expected: usize, found: usize },
    #[error("query embedding file must hold exactly one row, found {0}")]
    QueryRows(usize),
}

impl PipelineError {
    pub fn exit_class(&self) -> ExitClass {
        match self {
            PipelineError::Video(_) => ExitClass::Io,
            PipelineError::Embed(e) if e.is_provider_error() => ExitClass::Provider,
            PipelineError::Embed(EmbedError::EmptyQuery) => ExitClass::Config,
            PipelineError::Embed(_) => ExitClass::Io,
            _ => ExitClass::Config,
        }
    }
}

/// Inputs for one `select` run. Frame embeddings come from `frame_embeddings`
/// when given, otherwise from `endpoint`; the query embedding likewise from
/// `query_embedding` or `endpoint`.
#[derive(Debug, Clone)]
pub struct SelectRequest {
    pub video: PathBuf,
    pub query: String,
    pub config: SelectionConfig,
    pub frame_embeddings: Option<PathBuf>,
    pub query_embedding: Option<PathBuf>,
    pub endpoint: Option<ProviderEndpoint>,
    /// Where provider embeddings are cached; `None` disables the cache.
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub stage_timings_ms: BTreeMap<String, f64>,
}

#[derive(Default)]
struct Stopwatch {
    timings: BTreeMap<String, f64>,
}

impl Stopwatch {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        info!(stage, ms, "stage finished");
        *self.timings.entry(stage.to_string()).or_default() += ms;
        out
    }
}

/// Opened video with its content digest and the candidate set drawn from it.
struct Candidates {
    source: Box<dyn VideoSource>,
    meta: VideoMeta,
    digest: String,
    indices: Vec<usize>,
    warnings: Vec<String>,
}

fn take_candidates(video: &Path, requested: usize) -> Result<Candidates, PipelineError> {
    let source = open_video(video)?;
    let meta = source.meta().clone();
    let mut warnings: Vec<String> = source.warnings().to_vec();
    let digest = sha256_file(video).map_err(|e| VideoError::Io {
        path: video.to_path_buf(),
        source: e,
    })?;
    let count = requested.min(meta.total_frames);
    if count < requested {
        warnings.push(format!(
            "video has {} frames; using {count} candidates instead of {requested}",
            meta.total_frames
        ));
    }
    let indices = uniform_candidate_indices(meta.total_frames, count)?;
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Candidates {
        source,
        meta,
        digest,
        indices,
        warnings,
    })
}

/// Shrink `frame` so its longer side is at most `max_side`, keeping the
/// aspect ratio and even sides.
fn cap_size(frame: &DecodedFrame, max_side: Option<u32>) -> EncodedInput {
    let (w, h) = frame.image.dimensions();
    match max_side {
        Some(cap) if w.max(h) > cap && cap >= 2 => {
            let long = u64::from(w.max(h));
            let side = |s: u32| ((u64::from(s) * u64::from(cap) / long) as u32 & !1).max(2);
            EncodedInput::Resized(resize_rgb(&frame.image, side(w), side(h)))
        }
        _ => EncodedInput::Native,
    }
}

enum EncodedInput {
    Native,
    Resized(image::RgbImage),
}

/// Frame embeddings for the candidate set via the provider, through the
/// cache when one is configured. Returns the matrix and whether it was a
/// cache hit.
fn provider_frame_embeddings(
    provider: &HttpProvider,
    cands: &mut Candidates,
    cache: Option<&EmbeddingCache>,
) -> Result<(EmbeddingMatrix, bool), PipelineError> {
    let key = cache_key(&cands.digest, &cands.indices, provider.endpoint().model_hint.as_deref());
    if let Some(m) = cache.and_then(|c| c.get(&key)) {
        if m.rows() == cands.indices.len() {
            info!(key, "frame embeddings served from cache");
            return Ok((m, true));
        }
        warn!(key, "cached embedding count does not match candidates; refetching");
    }
    let health = provider.health()?;
    let frames = cands.source.decode(&cands.indices)?;
    let encoded = frames
        .iter()
        .map(|f| match cap_size(f, health.preferred_image_size) {
            EncodedInput::Native => EncodedImage::from_rgb(f.width(), f.height(), f.image.as_raw()),
            EncodedInput::Resized(img) => EncodedImage::from_rgb(img.width(), img.height(), img.as_raw()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = provider.embed_frames(&encoded)?;
    if let Some(c) = cache {
        if let Err(e) = c.put(&key, &matrix) {
            warn!(error = %e, "could not write embedding cache");
        }
    }
    Ok((matrix, false))
}

fn check_rows(matrix: &EmbeddingMatrix, expected: usize) -> Result<(), PipelineError> {
    if matrix.rows() != expected {
        return Err(PipelineError::EmbeddingCount {
            expected,
            found: matrix.rows(),
        });
    }
    Ok(())
}

fn native_base(meta: &VideoMeta) -> Resolution {
    Resolution::new(meta.width & !1, meta.height & !1)
}

/// Rank, allocate and lay out the selection in temporal order. This is the
/// part of a run that does not touch I/O.
pub fn plan_selection(
    scored: &ScoredCandidates,
    cfg: &SelectionConfig,
    tiers: TierCounts,
    meta: &VideoMeta,
    base: Resolution,
) -> Result<Vec<SelectedFrame>, PipelineError> {
    let mut rng = rng_from_seed(cfg.seed);
    let (ranked, _) = sample_ranked(&scored.scores, cfg.temperature, tiers.total(), cfg.deterministic, &mut rng)?;
    let assignment = assign_tiers(&ranked, tiers)?;
    let resolutions = TierResolutions::for_base(base)?;
    let mut entries: Vec<SelectedFrame> = assignment
        .iter()
        .map(|(rank, pos, tier)| {
            let frame_index = scored.frame_indices[pos];
            SelectedFrame {
                frame_index,
                timestamp_s: meta.timestamp_of(frame_index),
                rank,
                tier,
                score: scored.scores[pos],
                resolution: resolutions.get(tier),
            }
        })
        .collect();
    entries.sort_by_key(|e| e.frame_index);
    Ok(entries)
}

/// Run the whole selection and write frames plus manifest to `out_dir`.
pub fn run_select(req: &SelectRequest) -> Result<SelectOutcome, PipelineError> {
    let cfg = validate_config(req.config.clone())?;
    if req.query.trim().is_empty() {
        return Err(PipelineError::Usage("--query must not be empty".into()));
    }
    if req.frame_embeddings.is_none() && req.endpoint.is_none() {
        return Err(PipelineError::Usage(
            "frame embeddings need either --embeddings or --endpoint".into(),
        ));
    }
    if req.query_embedding.is_none() && req.endpoint.is_none() {
        return Err(PipelineError::Usage(
            "the query embedding needs either --query-embedding or --endpoint".into(),
        ));
    }
    let provider = req.endpoint.clone().map(HttpProvider::new).transpose()?;
    let cache = req.cache_dir.as_ref().map(EmbeddingCache::new);
    let mut clock = Stopwatch::default();

    let mut cands = clock.time("probe", || take_candidates(&req.video, cfg.candidates))?;
    let count = cands.indices.len();
    let tiers = clamp_to_candidates(cfg.tiers, count);
    if tiers != cfg.tiers {
        let w = format!(
            "allocation {} clamped to {tiers} for {count} candidates; realized token cost {}",
            cfg.tiers,
            token_cost(tiers)
        );
        warn!("{w}");
        cands.warnings.push(w);
    }

    let (query, frames, source) = clock.time("embedding", || -> Result<_, PipelineError> {
        let (query, query_source) = match &req.query_embedding {
            Some(path) => {
                let m = load_embedding_file(path)?;
                if m.rows() != 1 {
                    return Err(PipelineError::QueryRows(m.rows()));
                }
                (QueryEmbedding::new(m.row(0))?, format!("file:{}", path.display()))
            }
            None => {
                let p = provider.as_ref().expect("checked above");
                let text = p.embed_text(&req.query)?;
                if text.truncated {
                    cands
                        .warnings
                        .push("embedding service truncated the query".to_string());
                }
                (text.embedding, format!("http:{}", p.endpoint().base_url))
            }
        };
        let (frames, frame_source) = match &req.frame_embeddings {
            Some(path) => (load_embedding_file(path)?, format!("file:{}", path.display())),
            None => {
                let p = provider.as_ref().expect("checked above");
                let (m, _) = provider_frame_embeddings(p, &mut cands, cache.as_ref())?;
                let hint = p.endpoint().model_hint.as_deref().unwrap_or("");
                (m, format!("http:{}#{hint}", p.endpoint().base_url))
            }
        };
        check_rows(&frames, count)?;
        Ok((query, frames, format!("frames={frame_source} query={query_source}")))
    })?;

    let scored = clock.time("scoring", || -> Result<_, PipelineError> {
        let scores = similarity(&query, &frames)?;
        Ok(score_candidates(cands.indices.clone(), scores, cfg.temperature)?)
    })?;

    let base = cfg.base_resolution.unwrap_or_else(|| native_base(&cands.meta));
    let entries = clock.time("sampling", || plan_selection(&scored, &cfg, tiers, &cands.meta, base))?;

    let mut selected: Vec<usize> = entries.iter().map(|e| e.frame_index).collect();
    selected.sort_unstable();
    let decoded = clock.time("decode", || cands.source.decode(&selected))?;

    let result = SelectionResult {
        entries,
        realized_tiers: tiers,
        config_snapshot: cfg.into_inner(),
        query: req.query.clone(),
    };
    let generated_at_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let stage_timings_ms = clock.timings.clone();
    let ctx = RunContext {
        video: ManifestVideo {
            path: req.video.display().to_string(),
            digest: cands.digest.clone(),
            total_frames: cands.meta.total_frames,
            fps: cands.meta.fps,
            width: cands.meta.width,
            height: cands.meta.height,
        },
        embedding_source: source,
        scored: &scored,
        warnings: cands.warnings.clone(),
        wall_clock: WallClock {
            generated_at_unix_ms,
            stage_timings_ms: stage_timings_ms.clone(),
        },
    };
    let manifest = clock.time("write", || write_outputs(&result, &decoded, &req.out_dir, ctx))?;
    Ok(SelectOutcome {
        manifest,
        manifest_path: req.out_dir.join(MANIFEST_FILE),
        stage_timings_ms: clock.timings,
    })
}

/// Inputs for precomputing candidate embeddings.
#[derive(Debug, Clone)]
pub struct EmbedRequest {
    pub video: PathBuf,
    pub candidates: usize,
    pub endpoint: ProviderEndpoint,
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOutcome {
    pub path: PathBuf,
    pub rows: usize,
    pub dim: usize,
    pub cache_hit: bool,
    pub warnings: Vec<String>,
}

/// Embed the uniform candidate set of a video and write it as a QFEB file.
pub fn run_embed(req: &EmbedRequest) -> Result<EmbedOutcome, PipelineError> {
    if req.candidates == 0 {
        return Err(CqrError::NoCandidates.into());
    }
    let provider = HttpProvider::new(req.endpoint.clone())?;
    let cache = req.cache_dir.as_ref().map(EmbeddingCache::new);
    let mut cands = take_candidates(&req.video, req.candidates)?;
    let (matrix, cache_hit) = provider_frame_embeddings(&provider, &mut cands, cache.as_ref())?;
    write_embedding_file(&matrix, &req.out)?;
    Ok(EmbedOutcome {
        path: req.out.clone(),
        rows: matrix.rows(),
        dim: matrix.dim(),
        cache_hit,
        warnings: cands.warnings,
    })
}
