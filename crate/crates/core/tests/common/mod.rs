#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use qframe::cqr::EmbeddingMatrix;
use qframe::embed::write_embedding_file;
use qframe::video::synth::{write_y4m, Y4mPixels};

/// Red rises and green falls across the clip; blue stays at mid level.
pub fn color_ramp_frames(count: usize, width: u32, height: u32) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let r = (255 * i / (count - 1).max(1)) as u8;
            RgbImage::from_pixel(width, height, Rgb([r, 255 - r, 128]))
        })
        .collect()
}

pub fn write_color_ramp(dir: &Path, count: usize) -> PathBuf {
    let path = dir.join("ramp.y4m");
    write_y4m(&path, &color_ramp_frames(count, 32, 24), (24, 1), Y4mPixels::Yuv444).unwrap();
    path
}

/// Row `j` points at angle `j * 0.37` rad in the first two axes, so every
/// score against [`query_row`] is distinct.
pub fn fixture_rows(rows: usize) -> Vec<Vec<f32>> {
    (0..rows)
        .map(|j| {
            let t = j as f64 * 0.37;
            let v = [t.cos(), t.sin(), 0.3, 0.0];
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / n) as f32).collect()
        })
        .collect()
}

pub fn query_row() -> Vec<f32> {
    let n = (1.0f64 + 0.09).sqrt();
    vec![(1.0 / n) as f32, 0.0, (0.3 / n) as f32, 0.0]
}

/// Writes frame and query embedding files and returns their paths.
pub fn write_fixture_embeddings(dir: &Path, rows: usize) -> (PathBuf, PathBuf) {
    let frames = dir.join("frames.qfeb");
    let query = dir.join("query.qfeb");
    write_embedding_file(&EmbeddingMatrix::from_rows(&fixture_rows(rows)).unwrap(), &frames).unwrap();
    write_embedding_file(&EmbeddingMatrix::from_rows(&[query_row()]).unwrap(), &query).unwrap();
    (frames, query)
}

/// Cosine scores of the fixture rows against the fixture query, in f64
/// straight from the f32 components.
pub fn fixture_scores(rows: usize) -> Vec<f64> {
    let q: Vec<f64> = query_row().iter().map(|&x| f64::from(x)).collect();
    fixture_rows(rows)
        .iter()
        .map(|r| {
            let r: Vec<f64> = r.iter().map(|&x| f64::from(x)).collect();
            let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
            let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (nr * nq)
        })
        .collect()
}

/// Manifest JSON with the wall-clock field removed.
pub fn manifest_without_clock(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock");
    v
}
