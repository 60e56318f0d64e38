mod common;

use std::path::Path;
use std::time::Duration;

use common::*;
use qframe::embed::{ProviderEndpoint, RetryPolicy};
use qframe::model::{Resolution, SelectionConfig, Tier, TierCounts};
use qframe::pipeline::{run_embed, run_select, EmbedRequest, PipelineError, SelectRequest};
use qframe::video::Manifest;
use qframe_testkit::FixtureService;

fn file_request(video: &Path, frames: &Path, query: &Path, out: &Path, config: SelectionConfig) -> SelectRequest {
    SelectRequest {
        video: video.to_path_buf(),
        query: "a red object".into(),
        config,
        frame_embeddings: Some(frames.to_path_buf()),
        query_embedding: Some(query.to_path_buf()),
        endpoint: None,
        cache_dir: None,
        out_dir: out.to_path_buf(),
    }
}

fn endpoint(svc: &FixtureService) -> ProviderEndpoint {
    let mut ep = ProviderEndpoint::new(svc.base_url());
    ep.retry = RetryPolicy {
        max_retries: 1,
        initial_backoff: Duration::from_millis(5),
    };
    ep
}

fn seeded(seed: u64) -> SelectionConfig {
    SelectionConfig {
        seed,
        ..SelectionConfig::default()
    }
}

#[test]
fn repeated_runs_agree_except_for_the_clock() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_color_ramp(dir.path(), 240);
    let (frames, query) = write_fixture_embeddings(dir.path(), 128);
    let a = run_select(&file_request(&video, &frames, &query, &dir.path().join("a"), seeded(42))).unwrap();
    let b = run_select(&file_request(&video, &frames, &query, &dir.path().join("b"), seeded(42))).unwrap();
    assert_eq!(manifest_without_clock(&a.manifest_path), manifest_without_clock(&b.manifest_path));

    let m = Manifest::load(&a.manifest_path).unwrap();
    assert_eq!(m.selections.len(), 44);
    assert!(m.selections.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    assert_eq!(m.realized_token_cost, "8");
    assert_eq!(m.candidates.len(), 128);
    let count = |t: Tier| m.selections.iter().filter(|s| s.tier == t).count();
    assert_eq!((count(Tier::High), count(Tier::Mid), count(Tier::Low)), (4, 8, 32));
    for s in &m.selections {
        let png = image::open(a.manifest_path.parent().unwrap().join(&s.output_file)).unwrap();
        assert_eq!((png.width(), png.height()), (s.resolution.width, s.resolution.height));
        let expected = match s.tier {
            Tier::High => Resolution::new(32, 24),
            Tier::Mid => Resolution::new(16, 12),
            Tier::Low => Resolution::new(8, 6),
        };
        assert_eq!(s.resolution, expected);
    }
    // Ranks 1..=44 each appear once.
    let mut ranks: Vec<_> = m.selections.iter().map(|s| s.rank).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=44).collect::<Vec<_>>());
    for stage in ["embedding", "sampling"] {
        assert!(a.stage_timings_ms.contains_key(stage), "{stage}");
    }
}

#[test]
fn another_seed_changes_the_draw() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_color_ramp(dir.path(), 240);
    let (frames, query) = write_fixture_embeddings(dir.path(), 128);
    let a = run_select(&file_request(&video, &frames, &query, &dir.path().join("a"), seeded(1))).unwrap();
    let b = run_select(&file_request(&video, &frames, &query, &dir.path().join("b"), seeded(2))).unwrap();
    let picks = |m: &Manifest| m.selections.iter().map(|s| (s.frame_index, s.tier)).collect::<Vec<_>>();
    assert_ne!(picks(&a.manifest), picks(&b.manifest));
}

#[test]
fn deterministic_all_high_is_top_eight_by_score() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_color_ramp(dir.path(), 240);
    let (frames, query) = write_fixture_embeddings(dir.path(), 128);
    let cfg = SelectionConfig {
        tiers: TierCounts::new(8, 0, 0),
        deterministic: true,
        ..SelectionConfig::default()
    };
    let out = run_select(&file_request(&video, &frames, &query, &dir.path().join("o"), cfg)).unwrap();

    let scores = fixture_scores(128);
    let mut order: Vec<usize> = (0..128).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut expected: Vec<usize> = order[..8].iter().map(|&j| (2 * j + 1) * 240 / 256).collect();
    expected.sort_unstable();

    let m = &out.manifest;
    assert!(m.selections.iter().all(|s| s.tier == Tier::High));
    assert_eq!(m.selections.iter().map(|s| s.frame_index).collect::<Vec<_>>(), expected);
}

#[test]
fn short_video_clamps_candidates_and_tiers() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_color_ramp(dir.path(), 20);
    let (frames, query) = write_fixture_embeddings(dir.path(), 20);
    let out = run_select(&file_request(&video, &frames, &query, &dir.path().join("o"), seeded(3))).unwrap();
    let m = &out.manifest;
    assert_eq!(m.candidates, (0..20).collect::<Vec<_>>());
    assert_eq!(m.realized_tiers, TierCounts::new(4, 8, 8));
    assert_eq!(m.selections.len(), 20);
    assert!(m.warnings.iter().any(|w| w.contains("candidates")), "{:?}", m.warnings);
    assert!(m.warnings.iter().any(|w| w.contains("clamped")), "{:?}", m.warnings);
    assert_eq!(m.realized_token_cost, "13/2");
    // The requested allocation is kept in the snapshot.
    assert_eq!(m.config_snapshot.tiers, TierCounts::new(4, 8, 32));
}

#[test]
fn http_provider_path_selects_matching_frames_and_caches() {
    let svc = FixtureService::start();
    let dir = tempfile::tempdir().unwrap();
    let video = write_color_ramp(dir.path(), 160);
    let cache = dir.path().join("cache");
    let req = SelectRequest {
        video: video.clone(),
        query: "green".into(),
        config: SelectionConfig {
            tiers: TierCounts::new(8, 0, 0),
            deterministic: true,
            ..SelectionConfig::default()
        },
        frame_embeddings: None,
        query_embedding: None,
        endpoint: Some(endpoint(&svc)),
        cache_dir: Some(cache.clone()),
        out_dir: dir.path().join("o"),
    };
    let first = run_select(&req).unwrap();
    // Green falls along the ramp, so the best matches are early.
    assert!(first.manifest.selections.iter().all(|s| s.frame_index < 40), "{:?}", first.manifest.selections);
    assert!(first.manifest.embedding_source.contains("http:"));
    let image_requests = svc.stats().image_requests();
    assert!(image_requests > 0);

    let second = run_select(&SelectRequest {
        out_dir: dir.path().join("o2"),
        ..req
    })
    .unwrap();
    assert_eq!(svc.stats().image_requests(), image_requests, "second run should hit the cache");
    assert_eq!(manifest_without_clock(&first.manifest_path), manifest_without_clock(&second.manifest_path));
}

#[test]
fn embed_writes_candidates_and_reuses_the_cache() {
    let svc = FixtureService::start();
    let dir = tempfile::tempdir().unwrap();
    let video = write_color_ramp(dir.path(), 160);
    let cache = dir.path().join("cache");
    let req = |candidates: usize, name: &str| EmbedRequest {
        video: video.clone(),
        candidates,
        endpoint: endpoint(&svc),
        cache_dir: Some(cache.clone()),
        out: dir.path().join(name),
    };
    let a = run_embed(&req(128, "a.qfeb")).unwrap();
    assert_eq!((a.rows, a.dim, a.cache_hit), (128, 4, false));
    let b = run_embed(&req(128, "b.qfeb")).unwrap();
    assert!(b.cache_hit);
    assert_eq!(std::fs::read(&a.path).unwrap(), std::fs::read(&b.path).unwrap());

    run_embed(&req(64, "c.qfeb")).unwrap();
    let entries = std::fs::read_dir(&cache).unwrap().filter_map(Result::ok).count();
    assert_eq!(entries, 2);
}

#[test]
fn errors_map_to_stable_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_color_ramp(dir.path(), 40);
    let (frames, query) = write_fixture_embeddings(dir.path(), 128);

    // Wrong number of embedding rows for 40 candidates.
    let err = run_select(&file_request(&video, &frames, &query, &dir.path().join("o"), seeded(0))).unwrap_err();
    assert!(matches!(err, PipelineError::EmbeddingCount { expected: 40, found: 128 }));
    assert_eq!(err.exit_class().code(), 1);

    let missing = dir.path().join("missing.y4m");
    let err = run_select(&file_request(&missing, &frames, &query, &dir.path().join("o"), seeded(0))).unwrap_err();
    assert_eq!(err.exit_class().code(), 2);

    let bad_budget = SelectionConfig {
        tiers: TierCounts::new(5, 8, 32),
        ..SelectionConfig::default()
    };
    let err = run_select(&file_request(&video, &frames, &query, &dir.path().join("o"), bad_budget)).unwrap_err();
    assert_eq!(err.exit_class().code(), 1);

    let svc = FixtureService::start();
    let url = svc.base_url();
    drop(svc);
    let mut ep = ProviderEndpoint::new(url);
    ep.retry.max_retries = 0;
    let req = SelectRequest {
        query_embedding: None,
        endpoint: Some(ep),
        ..file_request(&video, &frames, &query, &dir.path().join("o"), seeded(0))
    };
    assert_eq!(run_select(&req).unwrap_err().exit_class().code(), 3);
    assert!(!dir.path().join("o").join("manifest.json").exists());
}
