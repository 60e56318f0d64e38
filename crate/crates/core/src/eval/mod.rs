//! Oracles and statistics for checking the sampler and allocator, plus a
//! synthetic benchmark comparing uniform and query-aware selection.

mod bench;
mod chi_square;
mod plackett_luce;
mod suite;

use thiserror::Error;

pub use bench::{
    run_synthetic_benchmark, BenchConfig, BenchReport, PairedComparison, Policy, PolicySummary, SyntheticCase,
};
pub use chi_square::{chi_square_gof, chi_square_quantile, GofOutcome, SIGNIFICANCE};
pub use plackett_luce::{
    empirical_tuple_frequencies, plackett_luce_exact, GumbelTopK, PlackettLuceTable, TupleCounts, TupleSampler,
    UniformTuples, MAX_ENUMERATION, MIN_TRIALS,
};
pub use suite::{conformance_fixtures, run_validation, ReportRecord, ValidationOptions};

use crate::qfs::QfsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("exact enumeration supports at most {max} categories, got {found}")]
    EnumerationTooLarge { found: usize, max: usize },
    #[error("invalid categorical distribution: {0}")]
    InvalidDistribution(String),
    #[error("tuple length {k} must be between 1 and {n}")]
    InvalidTupleLength { k: usize, n: usize },
    #[error("at least {min} trials are required, got {found}")]
    TooFewTrials { found: u64, min: u64 },
    #[error("expected count {expected:.3} in cell {cell} is below 5")]
    SparseCells { cell: String, expected: f64 },
    #[error("invalid synthetic case: {0}")]
    InvalidCase(String),
    #[error(transparent)]
    Sampler(#[from] QfsError),
}
