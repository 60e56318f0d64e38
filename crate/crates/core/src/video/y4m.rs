//! Reader for uncompressed YUV4MPEG2 streams.
//!
//! Frames are variable-length only through their `FRAME` header line, so
//! opening the file scans every header once and records payload offsets;
//! decoding then seeks straight to each requested frame.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use image::RgbImage;

use super::{check_indices, DecodedFrame, VideoError, VideoSource};
use crate::model::VideoMeta;

pub(crate) const SIGNATURE: &[u8; 10] = b"YUV4MPEG2 ";
const MAX_LINE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

impl Chroma {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => Some(Chroma::C420),
            "422" => Some(Chroma::C422),
            "444" => Some(Chroma::C444),
            "mono" => Some(Chroma::Mono),
            _ => None,
        }
    }

    /// Subsampled chroma plane size.
    fn chroma_dims(self, w: usize, h: usize) -> (usize, usize) {
        match self {
            Chroma::C420 => (w.div_ceil(2), h.div_ceil(2)),
            Chroma::C422 => (w.div_ceil(2), h),
            Chroma::C444 => (w, h),
            Chroma::Mono => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Header {
    pub width: usize,
    pub height: usize,
    pub fps_num: u64,
    pub fps_den: u64,
    pub chroma: Chroma,
    pub full_range: bool,
}

impl Header {
    fn parse(line: &str) -> Result<Self, String> {
        let mut width = None;
        let mut height = None;
        let mut fps = None;
        let mut chroma = Chroma::C420;
        let mut range: Option<bool> = None;
        for token in line.split_ascii_whitespace().skip(1) {
            let (tag, value) = token.split_at(1);
            match tag {
                "W" => width = value.parse::<usize>().ok(),
                "H" => height = value.parse::<usize>().ok(),
                "F" => {
                    let (n, d) = value.split_once(':').ok_or("malformed frame rate")?;
                    fps = Some((
                        n.parse::<u64>().map_err(|_| "malformed frame rate")?,
                        d.parse::<u64>().map_err(|_| "malformed frame rate")?,
                    ));
                }
                "C" => chroma = Chroma::parse(value).ok_or_else(|| format!("unsupported colorspace {value}"))?,
                "X" => {
                    if let Some(r) = value.strip_prefix("COLORRANGE=") {
                        range = Some(r.eq_ignore_ascii_case("FULL"));
                    }
                }
                _ => {}
            }
        }
        let width = width.filter(|&w| w > 0).ok_or("missing width")?;
        let height = height.filter(|&h| h > 0).ok_or("missing height")?;
        let (fps_num, fps_den) = fps.filter(|&(n, d)| n > 0 && d > 0).ok_or("missing frame rate")?;
        Ok(Self {
            width,
            height,
            fps_num,
            fps_den,
            chroma,
            // Grayscale has no chroma to scale and is read as full range.
            full_range: range.unwrap_or(chroma == Chroma::Mono),
        })
    }

    pub fn frame_bytes(&self) -> usize {
        let (cw, ch) = self.chroma.chroma_dims(self.width, self.height);
        self.width * self.height + 2 * cw * ch
    }

    /// Convert one planar frame to packed RGB.
    pub fn to_rgb(&self, payload: &[u8]) -> RgbImage {
        let (w, h) = (self.width, self.height);
        let luma = &payload[..w * h];
        if self.chroma == Chroma::Mono {
            let mut img = RgbImage::new(w as u32, h as u32);
            for (px, &y) in img.pixels_mut().zip(luma) {
                let v = if self.full_range { y } else { limited_luma(y) };
                px.0 = [v, v, v];
            }
            return img;
        }
        let (cw, ch) = self.chroma.chroma_dims(w, h);
        let cb = &payload[w * h..w * h + cw * ch];
        let cr = &payload[w * h + cw * ch..w * h + 2 * cw * ch];
        let (sx, sy) = (if cw == w { 1 } else { 2 }, if ch == h { 1 } else { 2 });
        let mut img = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let c = (y / sy) * cw + x / sx;
                let rgb = ycbcr_to_rgb(luma[y * w + x], cb[c], cr[c], self.full_range);
                img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
            }
        }
        img
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn limited_luma(y: u8) -> u8 {
    clamp_u8((f64::from(y) - 16.0) * 255.0 / 219.0)
}

/// BT.601 YCbCr to RGB, full or studio range.
pub(crate) fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8, full_range: bool) -> [u8; 3] {
    let (y, cb, cr) = if full_range {
        (f64::from(y), f64::from(cb) - 128.0, f64::from(cr) - 128.0)
    } else {
        (
            (f64::from(y) - 16.0) * 255.0 / 219.0,
            (f64::from(cb) - 128.0) * 255.0 / 224.0,
            (f64::from(cr) - 128.0) * 255.0 / 224.0,
        )
    };
    [
        clamp_u8(y + 1.402 * cr),
        clamp_u8(y - 0.344136 * cb - 0.714136 * cr),
        clamp_u8(y + 1.772 * cb),
    ]
}

/// Full-range BT.601 RGB to YCbCr.
pub(crate) fn rgb_to_ycbcr([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    [
        clamp_u8(0.299 * r + 0.587 * g + 0.114 * b),
        clamp_u8(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b),
        clamp_u8(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b),
    ]
}

fn read_line<R: BufRead>(reader: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut line = Vec::new();
    let n = reader.by_ref().take(MAX_LINE as u64).read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(line))
}

pub(crate) struct Y4mSource {
    path: PathBuf,
    header: Header,
    offsets: Vec<u64>,
    meta: VideoMeta,
    warnings: Vec<String>,
}

impl Y4mSource {
    pub fn open(path: &Path) -> Result<Self, VideoError> {
        let undecodable = |reason: String| VideoError::UndecodableContainer {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(|e| VideoError::io(path, e))?;
        let len = file.metadata().map_err(|e| VideoError::io(path, e))?.len();
        let mut reader = BufReader::new(file);
        let line = read_line(&mut reader)
            .map_err(|e| VideoError::io(path, e))?
            .filter(|l| l.ends_with(b"\n") && l.starts_with(SIGNATURE))
            .ok_or_else(|| undecodable("missing YUV4MPEG2 header".into()))?;
        let header = Header::parse(String::from_utf8_lossy(&line).trim_end()).map_err(undecodable)?;
        let frame_bytes = header.frame_bytes() as u64;

        let mut warnings = Vec::new();
        let mut offsets = Vec::new();
        let mut pos = line.len() as u64;
        while let Some(frame_line) = read_line(&mut reader).map_err(|e| VideoError::io(path, e))? {
            if !frame_line.starts_with(b"FRAME") || !frame_line.ends_with(b"\n") {
                return Err(undecodable(format!("bad frame header at byte {pos}")));
            }
            let payload_at = pos + frame_line.len() as u64;
            if payload_at + frame_bytes > len {
                warnings.push(format!(
                    "{}: ignoring truncated trailing frame {}",
                    path.display(),
                    offsets.len()
                ));
                break;
            }
            offsets.push(payload_at);
            pos = payload_at + frame_bytes;
            reader
                .seek(SeekFrom::Start(pos))
                .map_err(|e| VideoError::io(path, e))?;
        }
        if offsets.is_empty() {
            return Err(VideoError::ZeroFrames {
                path: path.to_path_buf(),
            });
        }
        let meta = VideoMeta {
            path: path.display().to_string(),
            total_frames: offsets.len(),
            fps: header.fps_num as f64 / header.fps_den as f64,
            width: header.width as u32,
            height: header.height as u32,
        };
        Ok(Self {
            path: path.to_path_buf(),
            header,
            offsets,
            meta,
            warnings,
        })
    }
}

impl VideoSource for Y4mSource {
    fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn decode(&mut self, indices: &[usize]) -> Result<Vec<DecodedFrame>, VideoError> {
        check_indices(indices, self.offsets.len())?;
        let mut file = File::open(&self.path).map_err(|e| VideoError::io(&self.path, e))?;
        let mut payload = vec![0u8; self.header.frame_bytes()];
        indices
            .iter()
            .map(|&index| {
                file.seek(SeekFrom::Start(self.offsets[index]))
                    .and_then(|_| file.read_exact(&mut payload))
                    .map_err(|e| VideoError::DecodeFailure {
                        index,
                        reason: e.to_string(),
                    })?;
                Ok(DecodedFrame {
                    frame_index: index,
                    timestamp_s: self.meta.timestamp_of(index),
                    image: self.header.to_rgb(&payload),
                })
            })
            .collect()
    }
}
