//! The conformance suite behind `qframe validate`.

use serde::{Deserialize, Serialize};

use super::{
    chi_square_gof, empirical_tuple_frequencies, plackett_luce_exact, EvalError, GumbelTopK, TupleSampler,
    UniformTuples,
};
use crate::mra::{token_cost, BUDGET_8_PRESETS};
use num_rational::Rational64;

/// One line of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub test: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub trials: u64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOptions {
    pub trials: u64,
    pub seed: u64,
    /// An extra distribution to check alongside the fixtures.
    pub custom: Option<(Vec<f64>, usize)>,
    /// Replace the production sampler with one that ignores `pi`.
    pub broken_sampler: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            trials: 50_000,
            seed: 0,
            custom: None,
            broken_sampler: false,
        }
    }
}

/// Distributions over 3, 4 and 5 categories, each checked at k = 2 and 3.
pub fn conformance_fixtures() -> Vec<(Vec<f64>, usize)> {
    let pis = [
        vec![0.7, 0.2, 0.1],
        vec![0.4, 0.3, 0.2, 0.1],
        vec![0.35, 0.25, 0.2, 0.12, 0.08],
    ];
    pis.iter()
        .flat_map(|pi| [2, 3].map(|k| (pi.clone(), k)))
        .collect()
}

/// Skewed law used by the negative control.
const CONTROL_PI: [f64; 3] = [0.7, 0.2, 0.1];
/// Largest allowed gap between an empirical tuple frequency and its exact
/// probability in the custom check.
const FREQUENCY_TOLERANCE: f64 = 0.01;

fn tuple_label(pi: &[f64], k: usize) -> String {
    let pi: Vec<String> = pi.iter().map(|p| p.to_string()).collect();
    format!("pi=[{}],k={k}", pi.join(","))
}

fn gof_record(
    test: String,
    sampler: &dyn TupleSampler,
    pi: &[f64],
    k: usize,
    trials: u64,
    seed: u64,
    expect_reject: bool,
) -> Result<ReportRecord, EvalError> {
    let table = plackett_luce_exact(pi, k)?;
    let counts = empirical_tuple_frequencies(sampler, pi, k, trials, seed)?;
    let out = chi_square_gof(&counts.counts, &table.probs, trials)?;
    Ok(ReportRecord {
        test,
        statistic: out.statistic,
        threshold: out.threshold,
        pass: out.reject == expect_reject,
        trials,
        seed: Some(seed),
    })
}

/// Budget identity for each preset, chi-square conformance of the sampler
/// for every fixture, a negative control that must reject, and optionally a
/// custom distribution.
pub fn run_validation(opts: &ValidationOptions) -> Result<Vec<ReportRecord>, EvalError> {
    let mut records = Vec::new();
    let eight = Rational64::from(8);
    for preset in BUDGET_8_PRESETS {
        let cost = token_cost(preset);
        records.push(ReportRecord {
            test: format!("budget_identity[{preset}]"),
            statistic: *cost.numer() as f64 / *cost.denom() as f64,
            threshold: 8.0,
            pass: cost == eight,
            trials: 0,
            seed: None,
        });
    }

    let production = GumbelTopK::default();
    let sampler: &dyn TupleSampler = if opts.broken_sampler { &UniformTuples } else { &production };
    let mut seed = opts.seed;
    for (pi, k) in conformance_fixtures() {
        records.push(gof_record(
            format!("plackett_luce[{}]", tuple_label(&pi, k)),
            sampler,
            &pi,
            k,
            opts.trials,
            seed,
            false,
        )?);
        seed = seed.wrapping_add(1);
    }

    records.push(gof_record(
        format!("negative_control[{}]", tuple_label(&CONTROL_PI, 2)),
        &UniformTuples,
        &CONTROL_PI,
        2,
        opts.trials,
        seed,
        true,
    )?);
    seed = seed.wrapping_add(1);

    if let Some((pi, k)) = &opts.custom {
        let label = tuple_label(pi, *k);
        records.push(gof_record(
            format!("plackett_luce[{label}]"),
            sampler,
            pi,
            *k,
            opts.trials,
            seed,
            false,
        )?);
        let table = plackett_luce_exact(pi, *k)?;
        let counts = empirical_tuple_frequencies(sampler, pi, *k, opts.trials, seed)?;
        let worst = table
            .probs
            .iter()
            .map(|(t, p)| (counts.frequency(t) - p).abs())
            .fold(0.0, f64::max);
        records.push(ReportRecord {
            test: format!("max_frequency_error[{label}]"),
            statistic: worst,
            threshold: FREQUENCY_TOLERANCE,
            pass: worst <= FREQUENCY_TOLERANCE,
            trials: opts.trials,
            seed: Some(seed),
        });
    }
    Ok(records)
}
