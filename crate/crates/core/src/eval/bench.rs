use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::cqr::uniform_candidate_indices;
use crate::model::{TierCounts, DEFAULT_CANDIDATES, DEFAULT_TEMPERATURE};
use crate::mra::{assign_tiers, DEFAULT_PRESET};
use crate::qfs::{gumbel_noise, log_softmax_temperature, rng_from_seed, PerturbedScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Uniform,
    TopK,
    Gumbel,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Uniform, Policy::TopK, Policy::Gumbel];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Uniform => "uniform",
            Policy::TopK => "topk",
            Policy::Gumbel => "gumbel",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Policy::Uniform),
            "topk" | "top-k" => Ok(Policy::TopK),
            "gumbel" => Ok(Policy::Gumbel),
            other => Err(format!("unknown policy {other:?}; expected uniform, topk or gumbel")),
        }
    }
}

/// One synthetic query: candidate scores are noise except at the planted
/// positions, whose mean is raised by `score_gap`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub candidates: usize,
    pub planted: BTreeSet<usize>,
    pub score_gap: f64,
    pub noise_sigma: f64,
}

impl SyntheticCase {
    pub fn new(candidates: usize, planted: BTreeSet<usize>, score_gap: f64, noise_sigma: f64) -> Result<Self, EvalError> {
        if candidates == 0 {
            return Err(EvalError::InvalidCase("no candidates".into()));
        }
        if let Some(&p) = planted.iter().find(|&&p| p >= candidates) {
            return Err(EvalError::InvalidCase(format!("planted position {p} outside 0..{candidates}")));
        }
        if planted.is_empty() {
            return Err(EvalError::InvalidCase("nothing planted".into()));
        }
        if !(score_gap >= 0.0 && score_gap.is_finite()) {
            return Err(EvalError::InvalidCase(format!("score gap {score_gap} must be non-negative")));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(EvalError::InvalidCase(format!("noise sigma {noise_sigma} must be non-negative")));
        }
        Ok(Self {
            candidates,
            planted,
            score_gap,
            noise_sigma,
        })
    }

    /// A single contiguous relevant segment.
    pub fn segment(candidates: usize, start: usize, len: usize, score_gap: f64, noise_sigma: f64) -> Result<Self, EvalError> {
        Self::new(candidates, (start..start + len).collect(), score_gap, noise_sigma)
    }

    pub fn draw_scores<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let noise = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
        (0..self.candidates)
            .map(|i| {
                let mean = if self.planted.contains(&i) { self.score_gap } else { 0.0 };
                mean + noise.sample(rng)
            })
            .collect()
    }

    pub fn recall(&self, selected: &[usize], k: usize) -> f64 {
        let hits = selected.iter().filter(|i| self.planted.contains(i)).count();
        hits as f64 / self.planted.len().min(k) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub candidates: usize,
    /// Length of the relevant segment, placed at a random start each trial.
    pub planted_len: usize,
    pub score_gap: f64,
    pub noise_sigma: f64,
    pub tiers: TierCounts,
    pub temperature: f64,
    pub trials: usize,
    pub seed: u64,
    pub policies: Vec<Policy>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_CANDIDATES,
            planted_len: 5,
            score_gap: 2.0,
            noise_sigma: 0.1,
            tiers: DEFAULT_PRESET,
            temperature: DEFAULT_TEMPERATURE,
            trials: 100,
            seed: 0,
            policies: Policy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub mean_recall: f64,
    pub std_error: f64,
    pub recalls: Vec<f64>,
    /// Mean per trial, in milliseconds.
    pub scoring_ms: f64,
    pub sampling_ms: f64,
}

/// A policy's per-trial recall minus the uniform baseline's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedComparison {
    pub policy: Policy,
    pub mean_diff: f64,
    pub std_error: f64,
    pub exceeds_two_se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub k: usize,
    pub summaries: Vec<PolicySummary>,
    pub versus_uniform: Vec<PairedComparison>,
}

impl BenchReport {
    pub fn summary(&self, policy: Policy) -> Option<&PolicySummary> {
        self.summaries.iter().find(|s| s.policy == policy)
    }

    pub fn comparison(&self, policy: Policy) -> Option<&PairedComparison> {
        self.versus_uniform.iter().find(|c| c.policy == policy)
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Run every policy on `trials` freshly drawn cases. Trial `t` uses its own
/// generator seeded from `seed + t`, shared by all policies, so results are
/// paired.
pub fn run_synthetic_benchmark(cfg: &BenchConfig) -> Result<BenchReport, EvalError> {
    let k = cfg.tiers.total();
    if k == 0 || k > cfg.candidates {
        return Err(EvalError::InvalidCase(format!(
            "{k} selections do not fit {} candidates",
            cfg.candidates
        )));
    }
    if cfg.planted_len == 0 || cfg.planted_len > cfg.candidates {
        return Err(EvalError::InvalidCase(format!(
            "planted length {} must be between 1 and {}",
            cfg.planted_len, cfg.candidates
        )));
    }
    if cfg.trials == 0 {
        return Err(EvalError::InvalidCase("no trials".into()));
    }
    let mut policies = cfg.policies.clone();
    policies.sort_unstable();
    policies.dedup();

    let uniform = uniform_candidate_indices(cfg.candidates, k).expect("k fits candidates");
    let mut recalls = vec![Vec::with_capacity(cfg.trials); policies.len()];
    let mut scoring_ms = vec![0.0; policies.len()];
    let mut sampling_ms = vec![0.0; policies.len()];
    for t in 0..cfg.trials {
        let mut rng = rng_from_seed(cfg.seed.wrapping_add(t as u64));
        let start = rng.gen_range(0..=cfg.candidates - cfg.planted_len);
        let case = SyntheticCase::segment(cfg.candidates, start, cfg.planted_len, cfg.score_gap, cfg.noise_sigma)?;
        let scores = case.draw_scores(&mut rng);
        for (p, policy) in policies.iter().enumerate() {
            let t0 = Instant::now();
            let (selected, t1) = match policy {
                Policy::Uniform => (uniform.clone(), t0),
                Policy::TopK | Policy::Gumbel => {
                    let log_probs = log_softmax_temperature(&scores, cfg.temperature)?;
                    let t1 = Instant::now();
                    let perturbed = if *policy == Policy::TopK {
                        PerturbedScores::noiseless(log_probs)
                    } else {
                        let noise = gumbel_noise(&mut rng, log_probs.len());
                        PerturbedScores::new(log_probs, noise)?
                    };
                    let ranked = perturbed.top_k(k)?;
                    assign_tiers(&ranked, cfg.tiers).expect("ranked length equals tier total");
                    (ranked.ordered_indices, t1)
                }
            };
            scoring_ms[p] += (t1 - t0).as_secs_f64() * 1e3;
            sampling_ms[p] += t1.elapsed().as_secs_f64() * 1e3;
            recalls[p].push(case.recall(&selected, k));
        }
    }

    let n = cfg.trials as f64;
    let summaries: Vec<PolicySummary> = policies
        .iter()
        .enumerate()
        .map(|(p, &policy)| {
            let (mean_recall, std_error) = mean_and_se(&recalls[p]);
            PolicySummary {
                policy,
                mean_recall,
                std_error,
                recalls: recalls[p].clone(),
                scoring_ms: scoring_ms[p] / n,
                sampling_ms: sampling_ms[p] / n,
            }
        })
        .collect();

    let versus_uniform = match summaries.iter().find(|s| s.policy == Policy::Uniform) {
        Some(base) => summaries
            .iter()
            .filter(|s| s.policy != Policy::Uniform)
            .map(|s| {
                let diffs: Vec<f64> = s.recalls.iter().zip(&base.recalls).map(|(a, b)| a - b).collect();
                let (mean_diff, std_error) = mean_and_se(&diffs);
                PairedComparison {
                    policy: s.policy,
                    mean_diff,
                    std_error,
                    exceeds_two_se: mean_diff > 2.0 * std_error && mean_diff > 0.0,
                }
            })
            .collect(),
        None => Vec::new(),
    };

    Ok(BenchReport {
        config: cfg.clone(),
        k,
        summaries,
        versus_uniform,
    })
}
