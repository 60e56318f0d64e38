//! libavformat/libavcodec backend.

use std::path::{Path, PathBuf};
use std::sync::Once;

use ffmpeg_next as ff;
use ff::codec::context::Context as CodecContext;
use ff::format::Pixel;
use ff::software::scaling::{Context as Scaler, Flags as ScaleFlags};
use ff::util::rational::Rational;
use ff::{decoder, encoder, frame, media, Packet, Rescale};
use image::RgbImage;

use super::{check_indices, DecodedFrame, VideoError, VideoSource};
use crate::model::VideoMeta;

fn init() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        ff::init().expect("ffmpeg initialisation");
        ff::util::log::set_level(ff::util::log::Level::Fatal);
    });
}

/// Relative spread of frame intervals above which a stream is treated as
/// variable frame rate.
const VFR_TOLERANCE: f64 = 0.01;

pub(crate) struct FfmpegSource {
    path: PathBuf,
    input: ff::format::context::Input,
    stream_index: usize,
    time_base: Rational,
    decoder: decoder::Video,
    scaler: Option<Scaler>,
    /// Presentation timestamps of every frame, ascending.
    pts: Vec<i64>,
    /// Keyframe presentation timestamps, ascending.
    keyframes: Vec<i64>,
    /// Timestamp of the last frame handed out by the decoder.
    position: Option<i64>,
    eof_sent: bool,
    meta: VideoMeta,
    warnings: Vec<String>,
}

impl FfmpegSource {
    pub fn open(path: &Path) -> Result<Self, VideoError> {
        init();
        let undecodable = |reason: String| VideoError::UndecodableContainer {
            path: path.to_path_buf(),
            reason,
        };
        let mut input = ff::format::input(&path).map_err(|e| undecodable(e.to_string()))?;
        let format_name = input.format().name().to_string();
        if format_name.contains("image2") || format_name.ends_with("_pipe") {
            return Err(undecodable(format!("{format_name} is a still-image format")));
        }
        let stream = input
            .streams()
            .best(media::Type::Video)
            .ok_or_else(|| undecodable("no video stream".into()))?;
        let stream_index = stream.index();
        let time_base = stream.time_base();
        let avg_rate = stream.avg_frame_rate();
        let real_rate = stream.rate();
        let header_frames = stream.frames();
        let decoder = CodecContext::from_parameters(stream.parameters())
            .and_then(|c| c.decoder().video())
            .map_err(|e| undecodable(format!("no decoder: {e}")))?;
        let (width, height) = (decoder.width(), decoder.height());
        if width == 0 || height == 0 {
            return Err(undecodable("stream reports zero dimensions".into()));
        }

        // Index scan: one packet per frame.
        let mut pts = Vec::new();
        let mut keyframes = Vec::new();
        let mut last_duration = 0;
        let mut packet = Packet::empty();
        loop {
            match packet.read(&mut input) {
                Ok(()) => {}
                Err(ff::Error::Eof) => break,
                Err(e) => return Err(undecodable(format!("index scan failed: {e}"))),
            }
            if packet.stream() != stream_index {
                continue;
            }
            let Some(ts) = packet.pts().or(packet.dts()) else {
                continue;
            };
            pts.push(ts);
            if packet.is_key() {
                keyframes.push(ts);
            }
            last_duration = packet.duration();
        }
        if pts.is_empty() {
            return Err(VideoError::ZeroFrames {
                path: path.to_path_buf(),
            });
        }
        pts.sort_unstable();
        keyframes.sort_unstable();
        let total_frames = pts.len();
        let mut warnings = Vec::new();
        if header_frames > 0 && header_frames as usize != total_frames {
            warnings.push(format!(
                "{}: header declares {header_frames} frames but the index has {total_frames}",
                path.display()
            ));
        }

        let tb = f64::from(time_base);
        let deltas: Vec<i64> = pts.windows(2).map(|w| w[1] - w[0]).collect();
        let mean_delta = if deltas.is_empty() {
            last_duration.max(1) as f64
        } else {
            deltas.iter().sum::<i64>() as f64 / deltas.len() as f64
        };
        let duration_s = (pts[total_frames - 1] - pts[0]) as f64 * tb
            + if last_duration > 0 { last_duration as f64 } else { mean_delta } * tb;
        let variable = deltas
            .iter()
            .any(|&d| (d as f64 - mean_delta).abs() > (VFR_TOLERANCE * mean_delta).max(1.0));
        // Containers with a coarse clock round the average rate; the
        // real base rate is exact when it agrees with it.
        let avg_fps = f64::from(avg_rate);
        let real_fps = f64::from(real_rate);
        let header_fps = if real_fps.is_finite() && real_fps > 0.0 && (real_fps - avg_fps).abs() <= 0.01 * avg_fps {
            real_fps
        } else {
            avg_fps
        };
        let fps = if variable || !(header_fps.is_finite() && header_fps > 0.0) {
            let fps = total_frames as f64 / duration_s;
            warnings.push(format!(
                "{}: variable or unknown frame rate, using {total_frames} frames / {duration_s:.3} s = {fps:.4} fps",
                path.display()
            ));
            fps
        } else {
            header_fps
        };

        Ok(Self {
            path: path.to_path_buf(),
            input,
            stream_index,
            time_base,
            decoder,
            scaler: None,
            pts,
            keyframes,
            position: None,
            eof_sent: false,
            meta: VideoMeta {
                path: path.display().to_string(),
                total_frames,
                fps,
                width,
                height,
            },
            warnings,
        })
    }

    fn seek_to(&mut self, target: i64) -> Result<(), String> {
        let ts = target.rescale(self.time_base, ff::rescale::TIME_BASE);
        self.input.seek(ts, ..ts).map_err(|e| e.to_string())?;
        self.decoder.flush();
        self.position = None;
        self.eof_sent = false;
        Ok(())
    }

    /// Next frame out of the decoder, feeding packets as needed.
    fn next_frame(&mut self) -> Result<Option<(i64, frame::Video)>, String> {
        let mut frame = frame::Video::empty();
        loop {
            if self.decoder.receive_frame(&mut frame).is_ok() {
                let ts = frame.timestamp().or(frame.pts()).unwrap_or(i64::MIN);
                self.position = Some(ts);
                return Ok(Some((ts, frame)));
            }
            if self.eof_sent {
                return Ok(None);
            }
            let mut packet = Packet::empty();
            match packet.read(&mut self.input) {
                Ok(()) => {
                    if packet.stream() == self.stream_index {
                        self.decoder.send_packet(&packet).map_err(|e| e.to_string())?;
                    }
                }
                Err(ff::Error::Eof) => {
                    self.decoder.send_eof().map_err(|e| e.to_string())?;
                    self.eof_sent = true;
                }
                Err(e) => return Err(e.to_string()),
            }
        }
    }

    fn convert_rgb(&mut self, frame: &frame::Video) -> Result<RgbImage, String> {
        let (w, h) = (frame.width(), frame.height());
        let stale = self.scaler.as_ref().is_none_or(|s| {
            s.input().format != frame.format() || s.input().width != w || s.input().height != h
        });
        if stale {
            self.scaler = Some(
                Scaler::get(frame.format(), w, h, Pixel::RGB24, w, h, ScaleFlags::BILINEAR)
                    .map_err(|e| e.to_string())?,
            );
        }
        let mut rgb = frame::Video::empty();
        self.scaler
            .as_mut()
            .unwrap()
            .run(frame, &mut rgb)
            .map_err(|e| e.to_string())?;
        let stride = rgb.stride(0);
        let data = rgb.data(0);
        let row = 3 * w as usize;
        let mut packed = Vec::with_capacity(row * h as usize);
        for y in 0..h as usize {
            packed.extend_from_slice(&data[y * stride..y * stride + row]);
        }
        Ok(RgbImage::from_raw(w, h, packed).expect("buffer size"))
    }

    fn decode_one(&mut self, index: usize) -> Result<RgbImage, String> {
        let target = self.pts[index];
        let key = self.keyframes.partition_point(|&k| k <= target);
        let keyframe = if key == 0 { self.pts[0] } else { self.keyframes[key - 1] };
        // Keep stepping when the decoder already sits between the keyframe
        // and the target; otherwise seek.
        let can_step = self.position.is_some_and(|p| p >= keyframe && p < target);
        if !can_step {
            self.seek_to(keyframe)?;
        }
        while let Some((ts, frame)) = self.next_frame()? {
            if ts == target {
                return self.convert_rgb(&frame);
            }
            if ts > target {
                return Err(format!("decoder skipped timestamp {target} (got {ts})"));
            }
        }
        Err(format!("stream ended before timestamp {target}"))
    }
}

impl VideoSource for FfmpegSource {
    fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn decode(&mut self, indices: &[usize]) -> Result<Vec<DecodedFrame>, VideoError> {
        check_indices(indices, self.pts.len())?;
        let mut out = Vec::with_capacity(indices.len());
        for &index in indices {
            let image = self
                .decode_one(index)
                .map_err(|reason| VideoError::DecodeFailure { index, reason })?;
            out.push(DecodedFrame {
                frame_index: index,
                timestamp_s: self.meta.timestamp_of(index),
                image,
            });
        }
        tracing::debug!(path = %self.path.display(), frames = out.len(), "decoded");
        Ok(out)
    }
}

/// Codec and pixel layout for [`encode_video`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureCodec {
    /// Lossless, intra-only, 8-bit gray.
    Ffv1Gray,
    /// Lossless, intra-only, YUV 4:4:4.
    Ffv1Yuv444,
    /// Lossy MPEG-4 part 2 with a keyframe every `gop` frames.
    Mpeg4 { gop: u32 },
}

/// Encode `frames` into a container chosen from the file extension.
/// `pts` gives each frame's timestamp in units of `time_base` (num, den),
/// which allows irregular spacing.
pub fn encode_video(
    path: impl AsRef<Path>,
    frames: &[RgbImage],
    pts: &[i64],
    time_base: (i32, i32),
    codec: FixtureCodec,
) -> Result<(), VideoError> {
    init();
    let path = path.as_ref();
    let fail = |reason: String| VideoError::Encode {
        path: path.to_path_buf(),
        reason,
    };
    if frames.is_empty() || frames.len() != pts.len() {
        return Err(fail("need one timestamp per frame and at least one frame".into()));
    }
    let (w, h) = frames[0].dimensions();
    let (codec_id, pixel) = match codec {
        FixtureCodec::Ffv1Gray => (ff::codec::Id::FFV1, Pixel::GRAY8),
        FixtureCodec::Ffv1Yuv444 => (ff::codec::Id::FFV1, Pixel::YUV444P),
        FixtureCodec::Mpeg4 { .. } => (ff::codec::Id::MPEG4, Pixel::YUV420P),
    };
    let tb = Rational::new(time_base.0, time_base.1);

    let mut octx = ff::format::output(&path).map_err(|e| fail(e.to_string()))?;
    let global_header = octx.format().flags().contains(ff::format::Flags::GLOBAL_HEADER);
    let enc_codec = encoder::find(codec_id).ok_or_else(|| fail(format!("no {codec_id:?} encoder")))?;
    let mut ost = octx.add_stream(enc_codec).map_err(|e| fail(e.to_string()))?;
    let mut enc = CodecContext::new_with_codec(enc_codec)
        .encoder()
        .video()
        .map_err(|e| fail(e.to_string()))?;
    enc.set_width(w);
    enc.set_height(h);
    enc.set_format(pixel);
    enc.set_time_base(tb);
    if let FixtureCodec::Mpeg4 { gop } = codec {
        enc.set_gop(gop);
        enc.set_max_b_frames(0);
        enc.set_qmin(2);
        enc.set_qmax(4);
    }
    if global_header {
        enc.set_flags(ff::codec::Flags::GLOBAL_HEADER);
    }
    let mut enc = enc.open_as(enc_codec).map_err(|e| fail(e.to_string()))?;
    ost.set_parameters(&enc);
    ost.set_time_base(tb);
    octx.write_header().map_err(|e| fail(e.to_string()))?;
    let ost_tb = octx.stream(0).expect("output stream").time_base();

    let mut scaler = Scaler::get(Pixel::RGB24, w, h, pixel, w, h, ScaleFlags::BILINEAR)
        .map_err(|e| fail(e.to_string()))?;
    let drain = |enc: &mut encoder::Video, octx: &mut ff::format::context::Output| -> Result<(), VideoError> {
        let mut packet = Packet::empty();
        while enc.receive_packet(&mut packet).is_ok() {
            packet.set_stream(0);
            packet.rescale_ts(tb, ost_tb);
            packet.write_interleaved(octx).map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    };
    for (img, &ts) in frames.iter().zip(pts) {
        let mut src = frame::Video::new(Pixel::RGB24, w, h);
        let stride = src.stride(0);
        let row = 3 * w as usize;
        for (y, line) in img.as_raw().chunks_exact(row).enumerate() {
            src.data_mut(0)[y * stride..y * stride + row].copy_from_slice(line);
        }
        let mut dst = frame::Video::empty();
        scaler.run(&src, &mut dst).map_err(|e| fail(e.to_string()))?;
        dst.set_pts(Some(ts));
        enc.send_frame(&dst).map_err(|e| fail(e.to_string()))?;
        drain(&mut enc, &mut octx)?;
    }
    enc.send_eof().map_err(|e| fail(e.to_string()))?;
    drain(&mut enc, &mut octx)?;
    octx.write_trailer().map_err(|e| fail(e.to_string()))
}
