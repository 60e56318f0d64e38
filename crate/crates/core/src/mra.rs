//! Multi-resolution adaptation: rank-based tier assignment, per-tier
//! resolutions and the token budget in high-resolution-frame equivalents.
//!
//! A mid-tier frame costs 1/4 and a low-tier frame 1/16 of a high-tier
//! frame, so the budget of an allocation is `K + M/4 + N/16`.

use num_rational::Rational64;
use num_traits::Signed;
use thiserror::Error;

use crate::model::{Resolution, Tier, TierCounts};
use crate::qfs::RankedSelection;

/// Allocations that spend exactly eight high-resolution frames.
pub const BUDGET_8_PRESETS: [TierCounts; 6] = [
    TierCounts::new(8, 0, 0),
    TierCounts::new(6, 6, 8),
    TierCounts::new(6, 4, 16),
    TierCounts::new(4, 8, 32),
    TierCounts::new(4, 6, 40),
    TierCounts::new(4, 4, 48),
];

/// The preferred allocation for a budget of 8.
pub const DEFAULT_PRESET: TierCounts = TierCounts::new(4, 8, 32);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MraError {
    #[error("ranked selection has {found} entries but tiers need {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("base resolution {0} is too small, both sides must be at least 4")]
    BaseTooSmall(Resolution),
    #[error("budget {0} has no exact allocation")]
    NoExactSolution(Rational64),
    #[error("no preset allocation for budget {0}; presets exist only for 8")]
    PresetUnavailable(Rational64),
}

/// `K + M/4 + N/16`, exactly.
pub fn token_cost(tiers: TierCounts) -> Rational64 {
    Rational64::from(tiers.high as i64)
        + Rational64::new(tiers.mid as i64, 4)
        + Rational64::new(tiers.low as i64, 16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetStrategy {
    /// The preferred hand-tuned allocation (budget 8 only).
    Preset,
    /// One high-tier frame and as many low-tier frames as the budget allows.
    MaxCoverage,
}

pub fn solve_budget(budget: Rational64, strategy: BudgetStrategy) -> Result<TierCounts, MraError> {
    if !budget.is_positive() {
        return Err(MraError::NoExactSolution(budget));
    }
    match strategy {
        BudgetStrategy::Preset => {
            if budget == Rational64::from(8) {
                Ok(DEFAULT_PRESET)
            } else {
                Err(MraError::PresetUnavailable(budget))
            }
        }
        BudgetStrategy::MaxCoverage => {
            // Smallest K is 1. The remainder B - 1 is spent entirely on low
            // frames, which needs 16 * (B - 1) to be a non-negative integer.
            // A larger K cannot help since 16 * (B - K) is integral iff
            // 16 * B is.
            let rest = (budget - Rational64::from(1)) * Rational64::from(16);
            if rest.is_negative() || !rest.is_integer() {
                return Err(MraError::NoExactSolution(budget));
            }
            Ok(TierCounts::new(1, 0, rest.to_integer() as usize))
        }
    }
}

/// Shrink the allocation to fit `candidates`, taking from the low tier
/// first, then mid, then high.
pub fn clamp_to_candidates(tiers: TierCounts, candidates: usize) -> TierCounts {
    if tiers.total() <= candidates {
        return tiers;
    }
    let high = tiers.high.min(candidates);
    let mid = tiers.mid.min(candidates - high);
    let low = tiers.low.min(candidates - high - mid);
    TierCounts::new(high, mid, low)
}

/// Candidate positions split by tier, each list in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierAssignment {
    pub high: Vec<usize>,
    pub mid: Vec<usize>,
    pub low: Vec<usize>,
}

impl TierAssignment {
    pub fn counts(&self) -> TierCounts {
        TierCounts::new(self.high.len(), self.mid.len(), self.low.len())
    }

    /// `(rank, candidate position, tier)` with 1-based ranks.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Tier)> + '_ {
        self.high
            .iter()
            .map(|&p| (p, Tier::High))
            .chain(self.mid.iter().map(|&p| (p, Tier::Mid)))
            .chain(self.low.iter().map(|&p| (p, Tier::Low)))
            .enumerate()
            .map(|(r, (p, t))| (r + 1, p, t))
    }
}

/// Ranks `1..=K` go high, the next `M` mid and the next `N` low.
pub fn assign_tiers(ranked: &RankedSelection, tiers: TierCounts) -> Result<TierAssignment, MraError> {
    let order = &ranked.ordered_indices;
    if order.len() != tiers.total() {
        return Err(MraError::LengthMismatch {
            expected: tiers.total(),
            found: order.len(),
        });
    }
    let (high, rest) = order.split_at(tiers.high);
    let (mid, low) = rest.split_at(tiers.mid);
    Ok(TierAssignment {
        high: high.to_vec(),
        mid: mid.to_vec(),
        low: low.to_vec(),
    })
}

fn even_floor(side: u32) -> u32 {
    (side & !1).max(2)
}

/// Target size for a tier: sides are divided by 1, 2 or 4 and floored to
/// an even number of pixels, never below 2.
pub fn tier_resolution(tier: Tier, base: Resolution) -> Result<Resolution, MraError> {
    if base.width < 4 || base.height < 4 {
        return Err(MraError::BaseTooSmall(base));
    }
    let divisor = match tier {
        Tier::High => 1,
        Tier::Mid => 2,
        Tier::Low => 4,
    };
    Ok(Resolution::new(
        even_floor(base.width / divisor),
        even_floor(base.height / divisor),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TierResolutions {
    pub high: Resolution,
    pub mid: Resolution,
    pub low: Resolution,
}

impl TierResolutions {
    pub fn for_base(base: Resolution) -> Result<Self, MraError> {
        Ok(Self {
            high: tier_resolution(Tier::High, base)?,
            mid: tier_resolution(Tier::Mid, base)?,
            low: tier_resolution(Tier::Low, base)?,
        })
    }

    pub fn get(&self, tier: Tier) -> Resolution {
        match tier {
            Tier::High => self.high,
            Tier::Mid => self.mid,
            Tier::Low => self.low,
        }
    }
}
