use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::ImageEncoder;
use serde::{Deserialize, Serialize};

use super::{resize_frame, DecodedFrame, VideoError};
use crate::model::{Resolution, ScoredCandidates, SelectionConfig, SelectionResult, Tier, TierCounts};
use crate::mra::token_cost;
use crate::util::{sha256_hex, temp_sibling};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub path: String,
    pub digest: String,
    pub total_frames: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSelection {
    pub frame_index: usize,
    pub timestamp_s: f64,
    pub rank: usize,
    pub tier: Tier,
    pub score: f64,
    pub resolution: Resolution,
    pub output_file: String,
    pub file_digest: String,
}

/// The only part of a manifest that differs between identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub generated_at_unix_ms: u128,
    pub stage_timings_ms: BTreeMap<String, f64>,
}

/// Machine-readable record of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub video: ManifestVideo,
    pub query: String,
    pub embedding_source: String,
    pub config_snapshot: SelectionConfig,
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub selections: Vec<ManifestSelection>,
    pub realized_tiers: TierCounts,
    pub realized_token_cost: String,
    pub warnings: Vec<String>,
    pub wall_clock: WallClock,
}

impl Manifest {
    /// Load a manifest from `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VideoError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| VideoError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| {
            VideoError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
    }
}

/// Everything besides the selection itself that goes into the manifest.
#[derive(Debug, Clone)]
pub struct RunContext<'a> {
    pub video: ManifestVideo,
    pub embedding_source: String,
    pub scored: &'a ScoredCandidates,
    pub warnings: Vec<String>,
    pub wall_clock: WallClock,
}

pub fn frame_file_name(rank: usize, frame_index: usize, tier: Tier) -> String {
    format!("{rank:03}_{frame_index:06}_{tier}.png")
}

fn encode_png(frame: &DecodedFrame, path: &Path) -> Result<Vec<u8>, VideoError> {
    let mut png = Vec::new();
    image::codecs::png::PngEncoder::new(&mut png)
        .write_image(
            frame.image.as_raw(),
            frame.width(),
            frame.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| VideoError::Encode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(png)
}

/// Write each selected frame as a PNG at its tier resolution, then the
/// manifest. The manifest goes last via temp file and rename; on any
/// failure the files written so far are removed and no manifest remains.
pub fn write_outputs(
    result: &SelectionResult,
    frames: &[DecodedFrame],
    out_dir: impl AsRef<Path>,
    ctx: RunContext<'_>,
) -> Result<Manifest, VideoError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| VideoError::io(out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    match fs::remove_file(&manifest_path) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(VideoError::io(&manifest_path, e)),
    }

    let mut written: Vec<PathBuf> = Vec::new();
    let outcome = write_all(result, frames, out_dir, ctx, &manifest_path, &mut written);
    if outcome.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        let _ = fs::remove_file(temp_sibling(&manifest_path));
    }
    outcome
}

fn write_all(
    result: &SelectionResult,
    frames: &[DecodedFrame],
    out_dir: &Path,
    ctx: RunContext<'_>,
    manifest_path: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<Manifest, VideoError> {
    let mut entries = result.entries.clone();
    entries.sort_by_key(|e| e.frame_index);
    let mut selections = Vec::with_capacity(entries.len());
    for entry in &entries {
        let frame = frames
            .iter()
            .find(|f| f.frame_index == entry.frame_index)
            .ok_or(VideoError::MissingFrame(entry.frame_index))?;
        let resized = resize_frame(frame, entry.resolution)?;
        let name = frame_file_name(entry.rank, entry.frame_index, entry.tier);
        let path = out_dir.join(&name);
        let png = encode_png(&resized, &path)?;
        fs::write(&path, &png).map_err(|e| VideoError::io(&path, e))?;
        written.push(path);
        selections.push(ManifestSelection {
            frame_index: entry.frame_index,
            timestamp_s: entry.timestamp_s,
            rank: entry.rank,
            tier: entry.tier,
            score: entry.score,
            resolution: entry.resolution,
            output_file: name,
            file_digest: sha256_hex(&png),
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        video: ctx.video,
        query: result.query.clone(),
        embedding_source: ctx.embedding_source,
        config_snapshot: result.config_snapshot.clone(),
        candidates: ctx.scored.frame_indices.clone(),
        scores: ctx.scored.scores.clone(),
        probabilities: ctx.scored.probabilities.clone(),
        selections,
        realized_tiers: result.realized_tiers,
        realized_token_cost: token_cost(result.realized_tiers).to_string(),
        warnings: ctx.warnings,
        wall_clock: ctx.wall_clock,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let tmp = temp_sibling(manifest_path);
    fs::write(&tmp, &json).map_err(|e| VideoError::io(&tmp, e))?;
    fs::rename(&tmp, manifest_path).map_err(|e| VideoError::io(manifest_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SelectedFrame;
    use crate::util::sha256_file;
    use image::{Rgb, RgbImage};

    fn scored() -> ScoredCandidates {
        crate::qfs::score_candidates(vec![0, 4, 8], vec![0.1, 0.9, 0.5], 0.8).unwrap()
    }

    fn setup() -> (SelectionResult, Vec<DecodedFrame>) {
        let entries = vec![
            SelectedFrame { frame_index: 8, timestamp_s: 0.8, rank: 2, tier: Tier::Mid, score: 0.5, resolution: Resolution::new(4, 4) },
            SelectedFrame { frame_index: 4, timestamp_s: 0.4, rank: 1, tier: Tier::High, score: 0.9, resolution: Resolution::new(8, 8) },
            SelectedFrame { frame_index: 0, timestamp_s: 0.0, rank: 3, tier: Tier::Low, score: 0.1, resolution: Resolution::new(2, 2) },
        ];
        let frames = [0usize, 4, 8]
            .iter()
            .map(|&i| DecodedFrame {
                frame_index: i,
                timestamp_s: i as f64 / 10.0,
                image: RgbImage::from_pixel(8, 8, Rgb([i as u8 * 20, 0, 0])),
            })
            .collect();
        let result = SelectionResult {
            entries,
            realized_tiers: TierCounts::new(1, 1, 1),
            config_snapshot: SelectionConfig::default(),
            query: "q".into(),
        };
        (result, frames)
    }

    fn ctx(scored: &ScoredCandidates) -> RunContext<'_> {
        RunContext {
            video: ManifestVideo { path: "v.y4m".into(), digest: "d".into(), total_frames: 10, fps: 10.0, width: 8, height: 8 },
            embedding_source: "file:e.qfeb".into(),
            scored,
            warnings: vec![],
            wall_clock: WallClock::default(),
        }
    }

    #[test]
    fn writes_one_png_per_selection_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let (result, frames) = setup();
        let s = scored();
        let m = write_outputs(&result, &frames, dir.path(), ctx(&s)).unwrap();
        let names: Vec<_> = m.selections.iter().map(|s| s.output_file.as_str()).collect();
        assert_eq!(names, ["003_000000_low.png", "001_000004_high.png", "002_000008_mid.png"]);
        for sel in &m.selections {
            let p = dir.path().join(&sel.output_file);
            assert_eq!(sha256_file(&p).unwrap(), sel.file_digest);
            let img = image::open(&p).unwrap();
            assert_eq!((img.width(), img.height()), (sel.resolution.width, sel.resolution.height));
        }
        let pngs = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count();
        assert_eq!(pngs, 3);
        assert_eq!(Manifest::load(dir.path().join(MANIFEST_FILE)).unwrap(), m);
        assert_eq!(m.realized_token_cost, "21/16");
    }

    #[test]
    fn failure_leaves_no_manifest_or_frames() {
        let dir = tempfile::tempdir().unwrap();
        let (result, mut frames) = setup();
        let s = scored();
        // A prior successful run leaves a manifest behind.
        write_outputs(&result, &frames, dir.path(), ctx(&s)).unwrap();
        frames.retain(|f| f.frame_index != 8);
        let err = write_outputs(&result, &frames, dir.path(), ctx(&s)).unwrap_err();
        assert!(matches!(err, VideoError::MissingFrame(8)));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
        assert!(!dir.path().join("003_000000_low.png").exists());
    }
}
