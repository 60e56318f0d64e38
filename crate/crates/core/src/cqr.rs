//! Uniform candidate downsampling and query-to-frame similarity scoring.

use thiserror::Error;

use crate::embed::{normalize_f32 as normalize, EmbedError};

/// Rows whose L2 norm strays further than this from 1 are renormalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CqrError {
    #[error("cannot take {candidates} candidates from a video with {frames} frames")]
    TooFewFrames { candidates: usize, frames: usize },
    #[error("candidate count must be at least 1")]
    NoCandidates,
    #[error("embedding dimension mismatch: query has {query}, frames have {frames}")]
    DimensionMismatch { query: usize, frames: usize },
}

/// Center-offset uniform sampling: candidate `j` is frame
/// `floor((j + 0.5) * frames / candidates)`.
pub fn uniform_candidate_indices(frames: usize, candidates: usize) -> Result<Vec<usize>, CqrError> {
    if candidates == 0 {
        return Err(CqrError::NoCandidates);
    }
    if candidates > frames {
        return Err(CqrError::TooFewFrames { candidates, frames });
    }
    // floor((2j + 1) * D / 2T) in integers avoids float rounding at exact
    // boundaries.
    let (d, t) = (frames as u128, candidates as u128);
    Ok((0..t)
        .map(|j| ((2 * j + 1) * d / (2 * t)) as usize)
        .collect())
}

/// `T` frame embeddings of dimension `d`, each row unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from raw rows, L2-normalizing each one.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, EmbedError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(EmbedError::RaggedRows {
                    row: i,
                    expected: dim,
                    found: row.len(),
                });
            }
            if dim == 0 {
                return Err(EmbedError::DimZero);
            }
            let unit = normalize(row).map_err(|e| e.at_row(i))?;
            data.extend(unit);
        }
        Ok(Self { dim, data })
    }

    /// An empty matrix of the given dimension.
    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    /// Wraps row-major data, renormalizing only rows that are not already
    /// unit-norm so that valid rows keep their exact bits.
    pub(crate) fn from_flat(dim: usize, mut data: Vec<f32>) -> Result<Self, EmbedError> {
        if dim == 0 {
            return if data.is_empty() {
                Ok(Self { dim, data })
            } else {
                Err(EmbedError::DimZero)
            };
        }
        debug_assert_eq!(data.len() % dim, 0);
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite { row: i });
            }
            if (l2_norm(row) - 1.0).abs() > UNIT_NORM_TOLERANCE {
                let unit = normalize(row).map_err(|e| e.at_row(i))?;
                row.copy_from_slice(&unit);
            }
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }
}

/// A unit-norm text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    vector: Vec<f32>,
}

impl QueryEmbedding {
    pub fn new(raw: &[f32]) -> Result<Self, EmbedError> {
        if raw.is_empty() {
            return Err(EmbedError::DimZero);
        }
        Ok(Self {
            vector: normalize(raw)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vector
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity of the query against every frame row.
pub fn similarity(query: &QueryEmbedding, frames: &EmbeddingMatrix) -> Result<Vec<f64>, CqrError> {
    if query.dim() != frames.dim() {
        return Err(CqrError::DimensionMismatch {
            query: query.dim(),
            frames: frames.dim(),
        });
    }
    Ok(frames
        .iter_rows()
        .map(|row| dot(query.as_slice(), row).clamp(-1.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_sampling() {
        assert_eq!(uniform_candidate_indices(4, 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn center_sampling_on_even_grid() {
        assert_eq!(uniform_candidate_indices(8, 4).unwrap(), vec![1, 3, 5, 7]);
    }

    #[test]
    fn long_video_endpoints() {
        // j=0: floor(0.5 * 4320 / 128) = floor(16.875); j=127: floor(127.5 * 33.75) = floor(4303.125)
        let idx = uniform_candidate_indices(4320, 128).unwrap();
        assert_eq!(idx.len(), 128);
        assert_eq!(idx[0], 16);
        assert_eq!(idx[127], 4303);
    }

    #[test]
    fn rejects_more_candidates_than_frames() {
        assert_eq!(
            uniform_candidate_indices(3, 4),
            Err(CqrError::TooFewFrames { candidates: 4, frames: 3 })
        );
        assert_eq!(uniform_candidate_indices(3, 0), Err(CqrError::NoCandidates));
    }

    #[test]
    fn orthonormal_scores() {
        let q = QueryEmbedding::new(&[1.0, 0.0]).unwrap();
        let f = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(similarity(&q, &f).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn self_similarity_is_one() {
        let rows = [[0.3f32, -0.2, 0.9], [0.5, 0.5, 0.1]];
        let f = EmbeddingMatrix::from_rows(&rows).unwrap();
        let q = QueryEmbedding::new(f.row(1)).unwrap();
        let s = similarity(&q, &f).unwrap();
        assert!((s[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_naive_dot_product() {
        // Fixed pseudo-random data; the oracle is an explicit index loop.
        let raw = [
            [0.12f32, -0.53, 0.77],
            [-0.91, 0.05, 0.33],
            [0.44, 0.44, -0.61],
            [0.02, 0.98, 0.11],
            [-0.35, -0.72, -0.28],
        ];
        let q_raw = [0.64f32, -0.21, 0.39];
        let f = EmbeddingMatrix::from_rows(&raw).unwrap();
        let q = QueryEmbedding::new(&q_raw).unwrap();
        let got = similarity(&q, &f).unwrap();
        for (j, &g) in got.iter().enumerate() {
            let mut acc = 0.0f64;
            for c in 0..3 {
                acc += f64::from(q.as_slice()[c]) * f64::from(f.row(j)[c]);
            }
            assert!((g - acc).abs() < 1e-9, "row {j}: {g} vs {acc}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let q = QueryEmbedding::new(&[1.0, 0.0, 0.0]).unwrap();
        let f = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert_eq!(
            similarity(&q, &f),
            Err(CqrError::DimensionMismatch { query: 3, frames: 2 })
        );
    }

    proptest! {
        #[test]
        fn candidate_indices_are_increasing_and_in_range(d in 1usize..5000, t_frac in 0.0f64..1.0) {
            let t = ((d as f64 * t_frac) as usize).max(1);
            let idx = uniform_candidate_indices(d, t).unwrap();
            prop_assert_eq!(idx.len(), t);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(*idx.last().unwrap() < d);
            prop_assert_eq!(idx, uniform_candidate_indices(d, t).unwrap());
        }

        #[test]
        fn scores_ignore_positive_scaling(
            rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..8),
            q in prop::collection::vec(-1.0f32..1.0, 4),
            scale in 0.01f32..100.0,
        ) {
            prop_assume!(rows.iter().all(|r| l2_norm(r) > 1e-3) && l2_norm(&q) > 1e-3);
            let base = similarity(&QueryEmbedding::new(&q).unwrap(), &EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap();
            let scaled_rows: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            let scaled_q: Vec<f32> = q.iter().map(|x| x * scale).collect();
            let scaled = similarity(&QueryEmbedding::new(&scaled_q).unwrap(), &EmbeddingMatrix::from_rows(&scaled_rows).unwrap()).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a - b).abs() < 1e-6);
                prop_assert!((-1.0..=1.0).contains(a));
            }
        }

        #[test]
        fn dot_is_symmetric(a in prop::collection::vec(-1.0f32..1.0, 6), b in prop::collection::vec(-1.0f32..1.0, 6)) {
            prop_assert!((dot(&a, &b) - dot(&b, &a)).abs() < 1e-12);
        }
    }
}
