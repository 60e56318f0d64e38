//! Probing, seeking and decoding video frames, resizing them per tier and
//! writing the run's frames plus manifest.
//!
//! Two container backends are available: a built-in reader for
//! uncompressed YUV4MPEG2 (`.y4m`) streams and, with the `ffmpeg` feature,
//! everything libavformat can open.

#[cfg(feature = "ffmpeg")]
mod ffmpeg;
mod output;
mod resize;
pub mod synth;
mod y4m;

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

pub use output::{
    frame_file_name, write_outputs, Manifest, ManifestSelection, ManifestVideo, RunContext, WallClock, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use resize::{resize_frame, resize_rgb};

use crate::model::VideoMeta;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("{}: not a decodable video container ({reason})", path.display())]
    UndecodableContainer { path: PathBuf, reason: String },
    #[error("{}: video has no frames", path.display())]
    ZeroFrames { path: PathBuf },
    #[error("frame index {index} out of range for {frames} frames")]
    IndexOutOfRange { index: usize, frames: usize },
    #[error("frame indices must be strictly increasing")]
    UnsortedIndices,
    #[error("failed to decode frame {index}: {reason}")]
    DecodeFailure { index: usize, reason: String },
    #[error("resize target {width}x{height} is invalid; sides must be even and at least 2")]
    TargetTooSmall { width: u32, height: u32 },
    #[error("I/O failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("selected frame {0} was not decoded")]
    MissingFrame(usize),
    #[error("image encoding failed for {}: {reason}", path.display())]
    Encode { path: PathBuf, reason: String },
}

impl VideoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        VideoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One decoded frame as packed RGB8.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFrame {
    pub frame_index: usize,
    pub timestamp_s: f64,
    pub image: RgbImage,
}

impl DecodedFrame {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// An opened video with a complete frame index.
pub trait VideoSource {
    fn meta(&self) -> &VideoMeta;

    /// Anything noticed while indexing, e.g. a header that disagreed with
    /// the scanned frame count.
    fn warnings(&self) -> &[String];

    /// Decode the given frames, seeking where possible. `indices` must be
    /// strictly increasing.
    fn decode(&mut self, indices: &[usize]) -> Result<Vec<DecodedFrame>, VideoError>;
}

pub(crate) fn check_indices(indices: &[usize], frames: usize) -> Result<(), VideoError> {
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(VideoError::UnsortedIndices);
    }
    if let Some(&index) = indices.iter().find(|&&i| i >= frames) {
        return Err(VideoError::IndexOutOfRange { index, frames });
    }
    Ok(())
}

/// Open `path` with whichever backend understands it.
pub fn open_video(path: impl AsRef<Path>) -> Result<Box<dyn VideoSource>, VideoError> {
    let path = path.as_ref();
    let mut magic = [0u8; 10];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .map_err(|e| VideoError::io(path, e))?;
    if n == magic.len() && &magic == y4m::SIGNATURE {
        return Ok(Box::new(y4m::Y4mSource::open(path)?));
    }
    open_with_ffmpeg(path)
}

#[cfg(feature = "ffmpeg")]
fn open_with_ffmpeg(path: &Path) -> Result<Box<dyn VideoSource>, VideoError> {
    Ok(Box::new(ffmpeg::FfmpegSource::open(path)?))
}

#[cfg(not(feature = "ffmpeg"))]
fn open_with_ffmpeg(path: &Path) -> Result<Box<dyn VideoSource>, VideoError> {
    Err(VideoError::UndecodableContainer {
        path: path.to_path_buf(),
        reason: "only YUV4MPEG2 is supported without the ffmpeg feature".into(),
    })
}

/// Frame count, rate and dimensions, from an index scan.
pub fn probe(path: impl AsRef<Path>) -> Result<VideoMeta, VideoError> {
    let source = open_video(path)?;
    for w in source.warnings() {
        tracing::warn!("{w}");
    }
    Ok(source.meta().clone())
}

/// Decode the frames at `indices` (strictly increasing) from `path`.
pub fn decode_frames(path: impl AsRef<Path>, indices: &[usize]) -> Result<Vec<DecodedFrame>, VideoError> {
    open_video(path)?.decode(indices)
}
