use std::collections::BTreeMap;

use rand::seq::index;

use super::EvalError;
use crate::qfs::{gumbel_noise, perturbed_topk, rng_from_seed, SelectionRng};

/// Largest category count the exact oracle will enumerate.
pub const MAX_ENUMERATION: usize = 8;
pub const MIN_TRIALS: u64 = 1000;

/// Exact probability of every ordered `k`-tuple drawn without replacement
/// from `pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlackettLuceTable {
    pub pi: Vec<f64>,
    pub k: usize,
    pub probs: BTreeMap<Vec<usize>, f64>,
}

impl PlackettLuceTable {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn get(&self, tuple: &[usize]) -> f64 {
        self.probs.get(tuple).copied().unwrap_or(0.0)
    }
}

fn check_distribution(pi: &[f64]) -> Result<(), EvalError> {
    if pi.is_empty() {
        return Err(EvalError::InvalidDistribution("no categories".into()));
    }
    if let Some(p) = pi.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(EvalError::InvalidDistribution(format!(
            "probability {p} is not strictly positive"
        )));
    }
    let sum: f64 = pi.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(EvalError::InvalidDistribution(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Enumerate the Plackett-Luce law of `k`-tuples under `pi`.
pub fn plackett_luce_exact(pi: &[f64], k: usize) -> Result<PlackettLuceTable, EvalError> {
    if pi.len() > MAX_ENUMERATION {
        return Err(EvalError::EnumerationTooLarge {
            found: pi.len(),
            max: MAX_ENUMERATION,
        });
    }
    check_distribution(pi)?;
    if k == 0 || k > pi.len() {
        return Err(EvalError::InvalidTupleLength { k, n: pi.len() });
    }
    let mut probs = BTreeMap::new();
    let mut prefix = Vec::with_capacity(k);
    let mut used = vec![false; pi.len()];
    enumerate(pi, k, 1.0, &mut prefix, &mut used, &mut probs);
    Ok(PlackettLuceTable {
        pi: pi.to_vec(),
        k,
        probs,
    })
}

fn enumerate(
    pi: &[f64],
    k: usize,
    p: f64,
    prefix: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut BTreeMap<Vec<usize>, f64>,
) {
    if prefix.len() == k {
        out.insert(prefix.clone(), p);
        return;
    }
    // Summing what is left, rather than 1 minus what was taken, keeps the
    // denominators exact for tiny remaining mass.
    let remaining: f64 = pi.iter().zip(used.iter()).filter(|(_, u)| !**u).map(|(q, _)| q).sum();
    for i in 0..pi.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        prefix.push(i);
        enumerate(pi, k, p * pi[i] / remaining, prefix, used, out);
        prefix.pop();
        used[i] = false;
    }
}

/// Draws one ordered `k`-tuple from `pi`.
pub trait TupleSampler {
    fn name(&self) -> &'static str;
    fn sample(&self, pi: &[f64], k: usize, rng: &mut SelectionRng) -> Result<Vec<usize>, EvalError>;
}

/// The production sampler: Gumbel noise on `ln pi`, then top-k.
#[derive(Debug, Clone, Copy, Default)]
pub struct GumbelTopK {
    pub deterministic: bool,
}

impl TupleSampler for GumbelTopK {
    fn name(&self) -> &'static str {
        if self.deterministic {
            "gumbel-topk-deterministic"
        } else {
            "gumbel-topk"
        }
    }

    fn sample(&self, pi: &[f64], k: usize, rng: &mut SelectionRng) -> Result<Vec<usize>, EvalError> {
        let noise = if self.deterministic {
            vec![0.0; pi.len()]
        } else {
            gumbel_noise(rng, pi.len())
        };
        Ok(perturbed_topk(pi, &noise, k)?.ordered_indices)
    }
}

/// Ignores `pi` and draws tuples uniformly. Used as a negative control.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformTuples;

impl TupleSampler for UniformTuples {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn sample(&self, pi: &[f64], k: usize, rng: &mut SelectionRng) -> Result<Vec<usize>, EvalError> {
        if k == 0 || k > pi.len() {
            return Err(EvalError::InvalidTupleLength { k, n: pi.len() });
        }
        Ok(index::sample(rng, pi.len(), k).into_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleCounts {
    pub counts: BTreeMap<Vec<usize>, u64>,
    pub trials: u64,
}

impl TupleCounts {
    pub fn frequency(&self, tuple: &[usize]) -> f64 {
        self.counts.get(tuple).copied().unwrap_or(0) as f64 / self.trials as f64
    }

    pub fn frequencies(&self) -> BTreeMap<Vec<usize>, f64> {
        self.counts
            .iter()
            .map(|(t, &c)| (t.clone(), c as f64 / self.trials as f64))
            .collect()
    }
}

/// Draw `trials` tuples with fresh noise from one seeded stream and count
/// them.
pub fn empirical_tuple_frequencies(
    sampler: &dyn TupleSampler,
    pi: &[f64],
    k: usize,
    trials: u64,
    seed: u64,
) -> Result<TupleCounts, EvalError> {
    if trials < MIN_TRIALS {
        return Err(EvalError::TooFewTrials {
            found: trials,
            min: MIN_TRIALS,
        });
    }
    check_distribution(pi)?;
    let mut rng = rng_from_seed(seed);
    let mut counts = BTreeMap::new();
    for _ in 0..trials {
        *counts.entry(sampler.sample(pi, k, &mut rng)?).or_insert(0) += 1;
    }
    Ok(TupleCounts { counts, trials })
}
