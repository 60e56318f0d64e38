use image::RgbImage;

use super::{DecodedFrame, VideoError};
use crate::model::Resolution;

/// Source coordinate and blend weight for each output position, using
/// half-pixel centers: `src = (dst + 0.5) * in / out - 0.5`, clamped to the
/// image.
fn taps(input: u32, output: u32) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    let last = (input - 1) as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = s.floor();
            let i1 = (i0 + 1.0).min(last);
            (i0 as usize, i1 as usize, (s - i0) as f32)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers.
pub fn resize_rgb(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    if src.dimensions() == (width, height) {
        return src.clone();
    }
    let (sw, _) = src.dimensions();
    let xs = taps(sw, width);
    let ys = taps(src.height(), height);
    let raw = src.as_raw();
    let stride = 3 * sw as usize;
    let mut out = Vec::with_capacity(3 * (width * height) as usize);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (&raw[y0 * stride..][..stride], &raw[y1 * stride..][..stride]);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = f32::from(r0[3 * x0 + c]) * (1.0 - fx) + f32::from(r0[3 * x1 + c]) * fx;
                let bottom = f32::from(r1[3 * x0 + c]) * (1.0 - fx) + f32::from(r1[3 * x1 + c]) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(width, height, out).expect("buffer size")
}

/// Resize a decoded frame to an even-sided target of at least 2x2.
pub fn resize_frame(frame: &DecodedFrame, target: Resolution) -> Result<DecodedFrame, VideoError> {
    let Resolution { width, height } = target;
    if width < 2 || height < 2 || width % 2 != 0 || height % 2 != 0 {
        return Err(VideoError::TargetTooSmall { width, height });
    }
    Ok(DecodedFrame {
        frame_index: frame.frame_index,
        timestamp_s: frame.timestamp_s,
        image: resize_rgb(&frame.image, width, height),
    })
}
