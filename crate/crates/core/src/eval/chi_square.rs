use std::collections::BTreeMap;
use std::fmt::Debug;

use serde::Serialize;
use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};

use super::EvalError;

/// Rejection level for every goodness-of-fit test in the suite.
pub const SIGNIFICANCE: f64 = 0.001;

/// Upper `1 - alpha` quantile of the chi-square law with `dof` degrees of
/// freedom.
pub fn chi_square_quantile(dof: usize, alpha: f64) -> f64 {
    let law = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    // statrs inverts by bisection to about 1e-6; a few Newton steps on the
    // survival function take it to full precision.
    let mut q = law.inverse_cdf(1.0 - alpha);
    for _ in 0..3 {
        q += (law.sf(q) - alpha) / law.pdf(q);
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GofOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub dof: usize,
    pub reject: bool,
}

/// Pearson's goodness-of-fit test of `observed` counts against `expected`
/// cell probabilities at [`SIGNIFICANCE`].
///
/// Observations in a cell with no expected mass make the fit impossible,
/// so the statistic is infinite and the test rejects.
pub fn chi_square_gof<K: Ord + Debug>(
    observed: &BTreeMap<K, u64>,
    expected: &BTreeMap<K, f64>,
    trials: u64,
) -> Result<GofOutcome, EvalError> {
    let n = trials as f64;
    if let Some((cell, p)) = expected.iter().find(|(_, p)| **p * n < 5.0) {
        return Err(EvalError::SparseCells {
            cell: format!("{cell:?}"),
            expected: p * n,
        });
    }
    let dof = expected.len().saturating_sub(1);
    if observed.keys().any(|k| !expected.contains_key(k)) {
        return Ok(GofOutcome {
            statistic: f64::INFINITY,
            threshold: if dof > 0 { chi_square_quantile(dof, SIGNIFICANCE) } else { 0.0 },
            dof,
            reject: true,
        });
    }
    let statistic: f64 = expected
        .iter()
        .map(|(cell, p)| {
            let e = p * n;
            let o = observed.get(cell).copied().unwrap_or(0) as f64;
            (o - e) * (o - e) / e
        })
        .sum();
    if dof == 0 {
        // One cell: every draw lands in it and there is nothing to test.
        return Ok(GofOutcome {
            statistic,
            threshold: 0.0,
            dof,
            reject: false,
        });
    }
    let threshold = chi_square_quantile(dof, SIGNIFICANCE);
    Ok(GofOutcome {
        statistic,
        threshold,
        dof,
        reject: statistic > threshold,
    })
}
