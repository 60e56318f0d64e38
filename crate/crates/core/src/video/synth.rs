//! Synthetic videos with known content, for fixtures and demos.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};

use super::y4m::rgb_to_ycbcr;
use super::VideoError;

#[cfg(feature = "ffmpeg")]
pub use super::ffmpeg::{encode_video, FixtureCodec};

/// Plane layout used by [`write_y4m`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Y4mPixels {
    /// Luma only; reads back exactly for gray input.
    Gray,
    /// Full-range BT.601 4:4:4.
    Yuv444,
}

/// Frame `i` is a uniform gray of level `i mod 256`.
pub fn gray_ramp_frames(count: usize, width: u32, height: u32) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let v = (i % 256) as u8;
            RgbImage::from_pixel(width, height, Rgb([v, v, v]))
        })
        .collect()
}

pub fn solid_frames(color: [u8; 3], count: usize, width: u32, height: u32) -> Vec<RgbImage> {
    vec![RgbImage::from_pixel(width, height, Rgb(color)); count]
}

/// Write `frames` as a YUV4MPEG2 stream at `fps_num / fps_den`.
pub fn write_y4m(
    path: impl AsRef<Path>,
    frames: &[RgbImage],
    fps: (u32, u32),
    pixels: Y4mPixels,
) -> Result<(), VideoError> {
    let path = path.as_ref();
    let (w, h) = frames.first().map_or((2, 2), |f| f.dimensions());
    if let Some(f) = frames.iter().find(|f| f.dimensions() != (w, h)) {
        return Err(VideoError::Encode {
            path: path.to_path_buf(),
            reason: format!("frame size {:?} differs from {w}x{h}", f.dimensions()),
        });
    }
    let io = |e| VideoError::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let color = match pixels {
        Y4mPixels::Gray => "Cmono",
        Y4mPixels::Yuv444 => "C444 XCOLORRANGE=FULL",
    };
    writeln!(out, "YUV4MPEG2 W{w} H{h} F{}:{} Ip A1:1 {color}", fps.0, fps.1).map_err(io)?;
    let n = (w * h) as usize;
    let mut planes = vec![0u8; 3 * n];
    for frame in frames {
        for (i, px) in frame.pixels().enumerate() {
            let [y, cb, cr] = rgb_to_ycbcr(px.0);
            planes[i] = y;
            planes[n + i] = cb;
            planes[2 * n + i] = cr;
        }
        out.write_all(b"FRAME\n").map_err(io)?;
        let len = if pixels == Y4mPixels::Gray { n } else { 3 * n };
        out.write_all(&planes[..len]).map_err(io)?;
    }
    out.flush().map_err(io)
}
