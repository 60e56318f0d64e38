//! Query-aware frame selection: temperature softmax over relevance scores
//! followed by a Gumbel-perturbed top-k, which draws an ordered sample
//! without replacement from the softmax distribution.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ScoredCandidates, ValidatedConfig};

/// Generator used for all seeded selection noise.
pub type SelectionRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SelectionRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QfsError {
    #[error("temperature must be a positive finite number, got {0}")]
    NonPositiveTemperature(f64),
    #[error("score at position {0} is not finite")]
    NonFiniteScore(usize),
    #[error("cannot select {k} of {available} candidates")]
    SelectionOverflow { k: usize, available: usize },
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("probability at position {0} is not strictly positive")]
    NonPositiveProbability(usize),
    #[error("no scores given")]
    Empty,
}

fn check_inputs(scores: &[f64], temperature: f64) -> Result<(), QfsError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(QfsError::NonPositiveTemperature(temperature));
    }
    if scores.is_empty() {
        return Err(QfsError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(QfsError::NonFiniteScore(i));
    }
    Ok(())
}

/// `log softmax(scores / temperature)`, stable for tiny temperatures where
/// the probabilities themselves underflow.
pub fn log_softmax_temperature(scores: &[f64], temperature: f64) -> Result<Vec<f64>, QfsError> {
    check_inputs(scores, temperature)?;
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(scaled.iter().map(|s| s - max - log_z).collect())
}

/// `softmax(scores / temperature)` with max-subtraction.
pub fn softmax_temperature(scores: &[f64], temperature: f64) -> Result<Vec<f64>, QfsError> {
    check_inputs(scores, temperature)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Attach probabilities to candidate scores.
pub fn score_candidates(
    frame_indices: Vec<usize>,
    scores: Vec<f64>,
    temperature: f64,
) -> Result<ScoredCandidates, QfsError> {
    if frame_indices.len() != scores.len() {
        return Err(QfsError::LengthMismatch {
            what: "scores",
            expected: frame_indices.len(),
            found: scores.len(),
        });
    }
    let probabilities = softmax_temperature(&scores, temperature)?;
    let log_probabilities = log_softmax_temperature(&scores, temperature)?;
    Ok(ScoredCandidates {
        frame_indices,
        scores,
        probabilities,
        log_probabilities,
    })
}

/// Standard Gumbel transform `-ln(-ln u)` of a uniform variate.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `n` independent Gumbel(0, 1) draws. Uniforms come from the open interval
/// (0, 1) so the transform never sees `ln 0`.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| gumbel_from_uniform(rng.sample::<f64, _>(Open01)))
        .collect()
}

/// Log-probabilities, the noise added to them and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedScores {
    pub log_probs: Vec<f64>,
    pub noise: Vec<f64>,
    pub perturbed: Vec<f64>,
}

impl PerturbedScores {
    pub fn new(log_probs: Vec<f64>, noise: Vec<f64>) -> Result<Self, QfsError> {
        if noise.len() != log_probs.len() {
            return Err(QfsError::LengthMismatch {
                what: "noise",
                expected: log_probs.len(),
                found: noise.len(),
            });
        }
        let perturbed = log_probs.iter().zip(&noise).map(|(l, g)| l + g).collect();
        Ok(Self {
            log_probs,
            noise,
            perturbed,
        })
    }

    /// No noise at all; selection degenerates to plain top-k.
    pub fn noiseless(log_probs: Vec<f64>) -> Self {
        let noise = vec![0.0; log_probs.len()];
        Self::new(log_probs, noise).expect("lengths match")
    }

    /// Top `k` positions by perturbed value, largest first. Equal values are
    /// ordered by smaller position.
    pub fn top_k(&self, k: usize) -> Result<RankedSelection, QfsError> {
        let n = self.perturbed.len();
        if k == 0 || k > n {
            return Err(QfsError::SelectionOverflow { k, available: n });
        }
        let p = &self.perturbed;
        let cmp = |&a: &usize, &b: &usize| p[b].total_cmp(&p[a]).then(a.cmp(&b));
        let mut order: Vec<usize> = (0..n).collect();
        if k < n {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        let keys = order.iter().map(|&i| p[i]).collect();
        Ok(RankedSelection {
            ordered_indices: order,
            keys,
        })
    }
}

/// Candidate positions in descending perturbed order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSelection {
    pub ordered_indices: Vec<usize>,
    /// Perturbed value of each selected position, non-increasing.
    pub keys: Vec<f64>,
}

impl RankedSelection {
    pub fn len(&self) -> usize {
        self.ordered_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered_indices.is_empty()
    }
}

/// Rank by `ln(probs) + noise` and keep the best `k`.
pub fn perturbed_topk(probs: &[f64], noise: &[f64], k: usize) -> Result<RankedSelection, QfsError> {
    if let Some(i) = probs.iter().position(|&p| p.is_nan() || p <= 0.0) {
        return Err(QfsError::NonPositiveProbability(i));
    }
    if k > probs.len() {
        return Err(QfsError::SelectionOverflow {
            k,
            available: probs.len(),
        });
    }
    let log_probs = probs.iter().map(|p| p.ln()).collect();
    PerturbedScores::new(log_probs, noise.to_vec())?.top_k(k)
}

/// Draw a ranked sample of `k` positions from the temperature softmax of
/// `scores`. With `deterministic` set the noise is skipped.
pub fn sample_ranked<R: Rng + ?Sized>(
    scores: &[f64],
    temperature: f64,
    k: usize,
    deterministic: bool,
    rng: &mut R,
) -> Result<(RankedSelection, PerturbedScores), QfsError> {
    let log_probs = log_softmax_temperature(scores, temperature)?;
    let perturbed = if deterministic {
        PerturbedScores::noiseless(log_probs)
    } else {
        let noise = gumbel_noise(rng, log_probs.len());
        PerturbedScores::new(log_probs, noise)?
    };
    Ok((perturbed.top_k(k)?, perturbed))
}

/// Selects `K + M + N` candidates, seeded from the config.
pub fn select_frames(
    scored: &ScoredCandidates,
    cfg: &ValidatedConfig,
) -> Result<RankedSelection, QfsError> {
    if scored.len() != cfg.candidates {
        return Err(QfsError::LengthMismatch {
            what: "candidates",
            expected: cfg.candidates,
            found: scored.len(),
        });
    }
    let mut rng = rng_from_seed(cfg.seed);
    sample_ranked(
        &scored.scores,
        cfg.temperature,
        cfg.tiers.total(),
        cfg.deterministic,
        &mut rng,
    )
    .map(|(ranked, _)| ranked)
}

/// Position of the largest value, first on ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_config, SelectionConfig, TierCounts};
    use proptest::prelude::*;

    #[test]
    fn softmax_of_equal_scores_is_uniform() {
        assert_eq!(softmax_temperature(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        for c in [-3.0, 0.0, 0.7, 250.0] {
            for tau in [0.01, 0.8, 5.0] {
                let p = softmax_temperature(&[c, c, c], tau).unwrap();
                for x in p {
                    assert!((x - 1.0 / 3.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn softmax_two_point() {
        // e^2 / (e^2 + 1) = 0.8807970779778823 (independently evaluated)
        let p = softmax_temperature(&[2.0, 0.0], 1.0).unwrap();
        assert!((p[0] - 0.880797).abs() < 1e-5);
        assert!((p[1] - 0.119203).abs() < 1e-5);
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        assert_eq!(
            softmax_temperature(&[1.0], 0.0),
            Err(QfsError::NonPositiveTemperature(0.0))
        );
        assert_eq!(
            softmax_temperature(&[1.0, f64::NAN], 1.0),
            Err(QfsError::NonFiniteScore(1))
        );
    }

    #[test]
    fn log_softmax_stays_finite_at_tiny_temperature() {
        let l = log_softmax_temperature(&[0.9, 0.1, 0.5], 1e-6).unwrap();
        assert!(l.iter().all(|x| x.is_finite()));
        assert_eq!(l[0], 0.0);
        assert!(l[1] < l[2]);
    }

    #[test]
    fn gumbel_transform_fixed_points() {
        assert!(gumbel_from_uniform((-1.0f64).exp()).abs() < 1e-15);
        assert!((gumbel_from_uniform((-std::f64::consts::E).exp()) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let mut rng = rng_from_seed(11);
        let g = gumbel_noise(&mut rng, 1_000_000);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        assert!((mean - 0.5772156649).abs() < 0.01, "mean {mean}");
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn noise_is_reproducible() {
        let a = gumbel_noise(&mut rng_from_seed(5), 16);
        let b = gumbel_noise(&mut rng_from_seed(5), 16);
        let c = gumbel_noise(&mut rng_from_seed(6), 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_reduces_to_top_k() {
        let sel = perturbed_topk(&[0.5, 0.3, 0.2], &[0.0; 3], 2).unwrap();
        assert_eq!(sel.ordered_indices, vec![0, 1]);
    }

    #[test]
    fn full_selection_is_a_permutation() {
        let noise = gumbel_noise(&mut rng_from_seed(1), 5);
        let sel = perturbed_topk(&[0.1, 0.2, 0.3, 0.25, 0.15], &noise, 5).unwrap();
        let mut sorted = sel.ordered_indices.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        assert!(sel.keys.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn ties_break_to_smaller_position() {
        let sel = perturbed_topk(&[0.25; 4], &[0.0; 4], 3).unwrap();
        assert_eq!(sel.ordered_indices, vec![0, 1, 2]);
    }

    #[test]
    fn overflow_is_rejected() {
        assert_eq!(
            perturbed_topk(&[0.5, 0.5], &[0.0, 0.0], 3),
            Err(QfsError::SelectionOverflow { k: 3, available: 2 })
        );
    }

    fn scored(scores: Vec<f64>, tau: f64) -> ScoredCandidates {
        let n = scores.len();
        score_candidates((0..n).collect(), scores, tau).unwrap()
    }

    fn cfg(t: usize, tiers: TierCounts, deterministic: bool, seed: u64, tau: f64) -> ValidatedConfig {
        validate_config(SelectionConfig {
            candidates: t,
            tiers,
            budget: crate::mra::token_cost(tiers),
            temperature: tau,
            seed,
            base_resolution: None,
            deterministic,
        })
        .unwrap()
    }

    #[test]
    fn deterministic_mode_takes_highest_scores() {
        let s = scored(vec![0.1, 0.9, 0.4, 0.7, 0.2], 0.8);
        let c = cfg(5, TierCounts::new(1, 0, 2), true, 0, 0.8);
        let sel = select_frames(&s, &c).unwrap();
        assert_eq!(sel.ordered_indices, vec![1, 3, 2]);
    }

    #[test]
    fn sharp_temperature_matches_deterministic() {
        let scores: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64 * 0.01).collect();
        let tiers = TierCounts::new(1, 4, 0);
        let reference = select_frames(&scored(scores.clone(), 1e-6), &cfg(20, tiers, true, 0, 1e-6)).unwrap();
        for seed in 0..200 {
            let sel = select_frames(&scored(scores.clone(), 1e-6), &cfg(20, tiers, false, seed, 1e-6)).unwrap();
            assert_eq!(sel.ordered_indices, reference.ordered_indices);
        }
    }

    #[test]
    fn same_seed_same_selection() {
        let s = scored((0..128).map(|i| (i as f64 * 0.37).sin()).collect(), 0.8);
        let c = cfg(128, TierCounts::default(), false, 42, 0.8);
        assert_eq!(select_frames(&s, &c).unwrap(), select_frames(&s, &c).unwrap());
    }

    #[test]
    fn candidate_count_must_match() {
        let s = scored(vec![0.1, 0.2], 0.8);
        let c = cfg(5, TierCounts::new(1, 0, 0), false, 0, 0.8);
        assert!(matches!(select_frames(&s, &c), Err(QfsError::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(scores in prop::collection::vec(-1.0f64..1.0, 1..200), tau in 1e-3f64..10.0) {
            let p = softmax_temperature(&scores, tau).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn softmax_is_shift_invariant(scores in prop::collection::vec(-1.0f64..1.0, 1..50), c in -100.0f64..100.0, tau in 0.05f64..5.0) {
            let a = softmax_temperature(&scores, tau).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let b = softmax_temperature(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn deterministic_rank_one_is_score_argmax(scores in prop::collection::vec(-1.0f64..1.0, 1..64), tau in 1e-4f64..10.0) {
            let mut rng = rng_from_seed(0);
            let (sel, pert) = sample_ranked(&scores, tau, 1, true, &mut rng).unwrap();
            prop_assert!(pert.noise.iter().all(|&g| g == 0.0));
            prop_assert_eq!(Some(sel.ordered_indices[0]), argmax(&scores));
        }

        #[test]
        fn ranked_selection_has_no_duplicates(n in 1usize..64, seed in any::<u64>(), kf in 0.0f64..1.0) {
            let k = ((n as f64 * kf) as usize).max(1);
            let scores: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3).cos()).collect();
            let mut rng = rng_from_seed(seed);
            let (sel, pert) = sample_ranked(&scores, 0.8, k, false, &mut rng).unwrap();
            prop_assert_eq!(sel.len(), k);
            let mut seen = sel.ordered_indices.clone();
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), k);
            prop_assert!(sel.keys.windows(2).all(|w| w[0] >= w[1]));
            for (j, &i) in sel.ordered_indices.iter().enumerate() {
                prop_assert_eq!(pert.perturbed[i], pert.log_probs[i] + pert.noise[i]);
                prop_assert_eq!(sel.keys[j], pert.perturbed[i]);
            }
        }
    }
}
