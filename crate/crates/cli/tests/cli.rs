use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use qframe::cqr::EmbeddingMatrix;
use qframe::embed::{load_embedding_file, write_embedding_file};
use qframe::video::synth::{write_y4m, Y4mPixels};
use qframe::video::Manifest;
use qframe_testkit::FixtureService;

fn qframe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qframe"))
        .args(args)
        .env_remove("QFRAME_ENDPOINT")
        .env_remove("QFRAME_CACHE_DIR")
        .env("QFRAME_LOG", "warn")
        .output()
        .unwrap()
}

fn qframe_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qframe"))
        .args(args)
        .env_remove("QFRAME_ENDPOINT")
        .env_remove("QFRAME_CACHE_DIR")
        .env("QFRAME_LOG", "warn")
        .envs(env.iter().copied())
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

struct Fixture {
    dir: tempfile::TempDir,
    video: PathBuf,
    frames: PathBuf,
    query: PathBuf,
}

impl Fixture {
    fn new(frames: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let video = dir.path().join("clip.y4m");
        let imgs: Vec<_> = (0..frames)
            .map(|i| {
                let r = (255 * i / (frames - 1)) as u8;
                RgbImage::from_pixel(32, 24, Rgb([r, 255 - r, 128]))
            })
            .collect();
        write_y4m(&video, &imgs, (24, 1), Y4mPixels::Yuv444).unwrap();
        let rows: Vec<Vec<f32>> = (0..128)
            .map(|j| {
                let t = j as f32 * 0.37;
                let v = [t.cos(), t.sin(), 0.3];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let frames_path = dir.path().join("frames.qfeb");
        write_embedding_file(&EmbeddingMatrix::from_rows(&rows).unwrap(), &frames_path).unwrap();
        let query = dir.path().join("query.qfeb");
        write_embedding_file(&EmbeddingMatrix::from_rows(&[[1.0f32, 0.0, 0.0]]).unwrap(), &query).unwrap();
        Self {
            dir,
            video,
            frames: frames_path,
            query,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn select_args<'a>(&'a self, out: &'a Path) -> Vec<&'a str> {
        vec![
            "select",
            "--video",
            self.video.to_str().unwrap(),
            "--query",
            "anything",
            "--embeddings",
            self.frames.to_str().unwrap(),
            "--query-embedding",
            self.query.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]
    }
}

#[test]
fn select_from_files_prints_the_manifest_path() {
    let fx = Fixture::new(240);
    let out = fx.path("out");
    let mut args = fx.select_args(&out);
    args.extend(["--candidates", "128", "--tiers", "4,8,32", "--tau", "0.8", "--seed", "42"]);
    let o = qframe(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = PathBuf::from(stdout(&o));
    assert_eq!(path, out.join("manifest.json"));
    let m = Manifest::load(&path).unwrap();
    assert_eq!(m.selections.len(), 44);
    assert_eq!(m.config_snapshot.seed, 42);
}

#[test]
fn all_high_deterministic_run() {
    let fx = Fixture::new(240);
    let out = fx.path("out");
    let mut args = fx.select_args(&out);
    args.extend(["--tiers", "8,0,0", "--deterministic"]);
    let o = qframe(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(m.selections.len(), 8);
    assert!(m.selections.iter().all(|s| s.tier.as_str() == "high"));
    assert!(m.config_snapshot.deterministic);
}

#[test]
fn missing_embedding_source_is_a_usage_error() {
    let fx = Fixture::new(30);
    let o = qframe(&["select", "--video", fx.video.to_str().unwrap(), "--query", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--endpoint"), "{}", stderr(&o));
}

#[test]
fn budget_violation_exits_one() {
    let fx = Fixture::new(240);
    let out = fx.path("out");
    let mut args = fx.select_args(&out);
    args.extend(["--tiers", "5,8,32"]);
    let o = qframe(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_exits_one() {
    assert_eq!(qframe(&["select", "--frames", "3"]).status.code(), Some(1));
    assert_eq!(qframe(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_video_exits_two() {
    let fx = Fixture::new(240);
    let out = fx.path("out");
    let missing = fx.path("missing.y4m");
    let mut args = fx.select_args(&out);
    args[2] = missing.to_str().unwrap();
    assert_eq!(qframe(&args).status.code(), Some(2));
}

#[test]
fn unreachable_provider_exits_three() {
    let fx = Fixture::new(240);
    let svc = FixtureService::start();
    let url = svc.base_url();
    drop(svc);
    let cfg = fx.path("cfg.toml");
    std::fs::write(&cfg, "max_retries = 0\n").unwrap();
    let out = fx.path("out");
    let o = qframe(&[
        "select",
        "--video",
        fx.video.to_str().unwrap(),
        "--query",
        "red",
        "--endpoint",
        &url,
        "--no-cache",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn endpoint_comes_from_the_environment() {
    let fx = Fixture::new(160);
    let svc = FixtureService::start();
    let out = fx.path("out");
    let cache = fx.path("cache");
    let o = qframe_env(
        &["select", "--video", fx.video.to_str().unwrap(), "--query", "green", "--out", out.to_str().unwrap()],
        &[("QFRAME_ENDPOINT", &svc.base_url()), ("QFRAME_CACHE_DIR", cache.to_str().unwrap())],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(svc.stats().image_requests() > 0);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let fx = Fixture::new(240);
    let cfg = fx.path("qframe.toml");
    std::fs::write(&cfg, "tau = 0.3\nseed = 5\ntiers = \"6,6,8\"\n").unwrap();
    let out = fx.path("out");
    let mut args = fx.select_args(&out);
    args.extend(["--config", cfg.to_str().unwrap(), "--seed", "9"]);
    let o = qframe(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = Manifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(m.config_snapshot.temperature, 0.3);
    assert_eq!(m.config_snapshot.seed, 9);
    assert_eq!(m.selections.len(), 20);

    std::fs::write(&cfg, "temprature = 0.3\n").unwrap();
    assert_eq!(qframe(&args).status.code(), Some(1));
}

#[test]
fn embed_writes_qfeb_and_reuses_cache_entries() {
    let fx = Fixture::new(160);
    let svc = FixtureService::start();
    let cache = fx.path("cache");
    let run = |candidates: &str, out: &Path| {
        qframe(&[
            "embed",
            "--video",
            fx.video.to_str().unwrap(),
            "--candidates",
            candidates,
            "--endpoint",
            &svc.base_url(),
            "--cache-dir",
            cache.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
    };
    let a = fx.path("a.qfeb");
    let o = run("128", &a);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), a.display().to_string());
    assert_eq!(load_embedding_file(&a).unwrap().rows(), 128);
    let requests = svc.stats().image_requests();

    let b = fx.path("b.qfeb");
    assert!(run("128", &b).status.success());
    assert_eq!(svc.stats().image_requests(), requests);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    assert!(run("64", &fx.path("c.qfeb")).status.success());
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 2);
}

#[test]
fn validate_passes_and_reports_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = qframe(&[
        "validate",
        "--trials",
        "50000",
        "--pi",
        "0.7,0.2,0.1",
        "--k",
        "2",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["config"]["trials"], 50000);
    let records = v["records"].as_array().unwrap();
    assert!(records.iter().any(|r| r["test"].as_str().unwrap().starts_with("plackett_luce")));
    let err = records
        .iter()
        .find(|r| r["test"].as_str().unwrap().starts_with("max_frequency_error"))
        .unwrap();
    assert!(err["statistic"].as_f64().unwrap() <= 0.01);
}

#[test]
fn broken_sampler_exits_four() {
    let o = qframe(&["validate", "--trials", "20000", "--broken-sampler"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bench_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let report = dir.path().join(name);
        let o = qframe(&[
            "bench",
            "--policy",
            "uniform",
            "--policy",
            "gumbel",
            "--trials",
            "100",
            "--seed",
            "7",
            "--report",
            report.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        v["summaries"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| (s["policy"].as_str().unwrap().to_string(), s["recalls"].clone()))
            .collect::<Vec<_>>()
    };
    let a = run("a.json");
    assert_eq!(a.len(), 2);
    assert_eq!(a, run("b.json"));
}

#[test]
fn inspect_describes_each_kind_of_file() {
    let fx = Fixture::new(240);
    let o = qframe(&["inspect", fx.frames.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((v["kind"].as_str(), v["rows"].as_u64(), v["dim"].as_u64()), (Some("qfeb"), Some(128), Some(3)));

    let o = qframe(&["inspect", fx.video.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((v["kind"].as_str(), v["total_frames"].as_u64()), (Some("video"), Some(240)));

    let out = fx.path("out");
    assert!(qframe(&fx.select_args(&out)).status.success());
    let o = qframe(&["inspect", out.join("manifest.json").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!((v["kind"].as_str(), v["selections"].as_u64()), (Some("manifest"), Some(44)));

    assert_eq!(qframe(&["inspect", fx.path("nope").to_str().unwrap()]).status.code(), Some(2));
}
