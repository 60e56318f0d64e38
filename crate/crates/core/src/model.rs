//! Shared domain types and configuration validation.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mra::token_cost;

/// Default number of uniformly pre-sampled candidate frames.
pub const DEFAULT_CANDIDATES: usize = 128;
/// Default softmax temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.8;
/// Default token budget in high-resolution-frame equivalents.
pub const DEFAULT_BUDGET: i64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("token budget violated: K + M/4 + N/16 = {lhs} but budget is {budget}")]
    BudgetViolation { lhs: Rational64, budget: Rational64 },
    #[error("temperature must be a positive finite number, got {0}")]
    NonPositiveTemperature(f64),
    #[error("candidate count {candidates} is smaller than the {selected} frames to select")]
    CandidateUnderflow { candidates: usize, selected: usize },
    #[error("budget must be positive, got {0}")]
    NonPositiveBudget(Rational64),
    #[error("invalid {what}: {value:?}")]
    Parse { what: &'static str, value: String },
}

/// Pixel dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ConfigError::Parse {
            what: "resolution (expected WxH)",
            value: s.to_string(),
        };
        let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(err)?;
        let width: u32 = w.trim().parse().map_err(|_| err())?;
        let height: u32 = h.trim().parse().map_err(|_| err())?;
        if width == 0 || height == 0 {
            return Err(err());
        }
        Ok(Self { width, height })
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Probed properties of a video file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub path: String,
    pub total_frames: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

impl VideoMeta {
    pub fn duration_s(&self) -> f64 {
        self.total_frames as f64 / self.fps
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.width, self.height)
    }

    pub fn timestamp_of(&self, frame_index: usize) -> f64 {
        frame_index as f64 / self.fps
    }
}

/// Number of frames assigned to each resolution tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TierCounts {
    pub high: usize,
    pub mid: usize,
    pub low: usize,
}

impl TierCounts {
    pub const fn new(high: usize, mid: usize, low: usize) -> Self {
        Self { high, mid, low }
    }

    pub fn total(&self) -> usize {
        self.high + self.mid + self.low
    }
}

impl Default for TierCounts {
    fn default() -> Self {
        Self::new(4, 8, 32)
    }
}

impl fmt::Display for TierCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.high, self.mid, self.low)
    }
}

impl FromStr for TierCounts {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<_> = s.split(',').map(|p| p.trim().parse::<usize>()).collect();
        match parts.as_slice() {
            [Ok(k), Ok(m), Ok(n)] => Ok(Self::new(*k, *m, *n)),
            _ => Err(ConfigError::Parse {
                what: "tier counts (expected K,M,N)",
                value: s.to_string(),
            }),
        }
    }
}

/// Parse a budget written as an integer, a fraction (`33/4`) or a
/// terminating decimal (`8.25`).
pub fn parse_budget(s: &str) -> Result<Rational64, ConfigError> {
    let err = || ConfigError::Parse {
        what: "budget",
        value: s.to_string(),
    };
    let s = s.trim();
    if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let denom = 10i64.pow(frac.len() as u32);
        let whole: i64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
        let frac: i64 = frac.parse().map_err(|_| err())?;
        let sign = if int.starts_with('-') { -1 } else { 1 };
        return Ok(Rational64::from(whole) + Rational64::new(sign * frac, denom));
    }
    Rational64::from_str(s).map_err(|_| err())
}

pub(crate) mod rational_string {
    use num_rational::Rational64;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(r)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational64, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_budget(&s).map_err(serde::de::Error::custom)
    }
}

/// Every tunable of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub candidates: usize,
    pub tiers: TierCounts,
    #[serde(with = "rational_string")]
    pub budget: Rational64,
    pub temperature: f64,
    pub seed: u64,
    /// Resolution of the high tier. `None` uses the video's native size.
    pub base_resolution: Option<Resolution>,
    /// Skip the Gumbel perturbation and take a plain top-k.
    pub deterministic: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_CANDIDATES,
            tiers: TierCounts::default(),
            budget: Rational64::from(DEFAULT_BUDGET),
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            base_resolution: None,
            deterministic: false,
        }
    }
}

/// A [`SelectionConfig`] whose invariants have been checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValidatedConfig(SelectionConfig);

impl ValidatedConfig {
    pub fn into_inner(self) -> SelectionConfig {
        self.0
    }
}

impl Deref for ValidatedConfig {
    type Target = SelectionConfig;

    fn deref(&self) -> &SelectionConfig {
        &self.0
    }
}

/// Checks the budget identity exactly plus the temperature and candidate
/// count constraints.
pub fn validate_config(cfg: SelectionConfig) -> Result<ValidatedConfig, ConfigError> {
    if !(cfg.temperature.is_finite() && cfg.temperature > 0.0) {
        return Err(ConfigError::NonPositiveTemperature(cfg.temperature));
    }
    if !cfg.budget.is_positive() {
        return Err(ConfigError::NonPositiveBudget(cfg.budget));
    }
    let lhs = token_cost(cfg.tiers);
    if lhs != cfg.budget {
        return Err(ConfigError::BudgetViolation {
            lhs,
            budget: cfg.budget,
        });
    }
    let selected = cfg.tiers.total();
    if cfg.candidates == 0 || cfg.candidates < selected {
        return Err(ConfigError::CandidateUnderflow {
            candidates: cfg.candidates,
            selected,
        });
    }
    debug_assert!(!lhs.is_zero());
    Ok(ValidatedConfig(cfg))
}

/// Candidate frames with their relevance scores and selection probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidates {
    pub frame_indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Natural log of `probabilities`, computed directly so it stays finite
    /// when a probability underflows.
    #[serde(skip)]
    pub log_probabilities: Vec<f64>,
}

impl ScoredCandidates {
    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::High => "high",
            Tier::Mid => "mid",
            Tier::Low => "low",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedFrame {
    pub frame_index: usize,
    pub timestamp_s: f64,
    /// 1-based position in the perturbed ranking.
    pub rank: usize,
    pub tier: Tier,
    pub score: f64,
    pub resolution: Resolution,
}

/// Selected frames in temporal order, with the counts actually realized
/// after clamping to the available candidates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub entries: Vec<SelectedFrame>,
    pub realized_tiers: TierCounts,
    pub config_snapshot: SelectionConfig,
    pub query: String,
}
