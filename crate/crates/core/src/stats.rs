//! Nonparametric statistics: Spearman rank correlation, Mann-Whitney U with
//! the Vargha-Delaney Â₁₂ effect size, and Cohen's kappa.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Conventional significance level.
pub const ALPHA: f64 = 0.05;
/// Exact Mann-Whitney enumeration is offered up to this many pairs.
pub const EXACT_MWU_MAX_PAIRS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("group {0} is empty")]
    EmptyGroup(u8),
    #[error("correlation undefined: a series has zero rank variance")]
    ConstantSeries,
    #[error("kappa undefined: expected agreement is 1 (both raters constant and equal)")]
    DegenerateAgreement,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("exact test limited to n1*n2 <= {EXACT_MWU_MAX_PAIRS}, got {0}")]
    ExactTooLarge(usize),
}

/// Strength of a rank correlation, applied to the signed coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationCategory {
    None,
    Weak,
    Moderate,
    Strong,
}

impl CorrelationCategory {
    pub fn from_rho(rho: f64) -> Self {
        if rho < 0.10 {
            Self::None
        } else if rho <= 0.29 {
            Self::Weak
        } else if rho <= 0.49 {
            Self::Moderate
        } else {
            Self::Strong
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Weak => "weak",
            Self::Moderate => "moderate",
            Self::Strong => "strong",
        }
    }
}

/// Magnitude of an Â₁₂ effect from `d = 2·|Â₁₂ − 0.5|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectMagnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectMagnitude {
    pub fn from_d(d: f64) -> Self {
        if d < 0.147 {
            Self::Negligible
        } else if d < 0.33 {
            Self::Small
        } else if d < 0.474 {
            Self::Medium
        } else {
            Self::Large
        }
    }

    pub fn from_a12(a12: f64) -> Self {
        Self::from_d(2.0 * (a12 - 0.5).abs())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negligible => "negligible",
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }
}

/// Which group tends to hold the smaller values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Group1Lower,
    Group2Lower,
    None,
}

impl Direction {
    pub fn from_a12(a12: f64) -> Self {
        match a12.partial_cmp(&0.5) {
            Some(Ordering::Less) => Self::Group1Lower,
            Some(Ordering::Greater) => Self::Group2Lower,
            _ => Self::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Group1Lower => "group1_lower",
            Self::Group2Lower => "group2_lower",
            Self::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub category: CorrelationCategory,
}

impl CorrelationResult {
    pub fn significant(&self) -> bool {
        self.p_value < ALPHA
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectResult {
    pub a12: f64,
    /// U statistic of group 1.
    pub u_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub magnitude: EffectMagnitude,
    pub direction: Direction,
}

impl EffectResult {
    pub fn significant(&self) -> bool {
        self.p_value < ALPHA
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub n_items: usize,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) share ranks i+1..=j.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Sizes of tie groups.
fn tie_sizes(xs: &[f64]) -> Vec<usize> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            sizes.push(j - i);
        }
        i = j;
    }
    sizes
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with average ranks for ties and a two-sided p-value from the
/// Student t approximation with `n − 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 4 {
        return Err(StatsError::TooFewSamples { needed: 4, got: n });
    }
    check_finite(x)?;
    check_finite(y)?;
    let rho = pearson(&average_ranks(x), &average_ranks(y)).ok_or(StatsError::ConstantSeries)?;
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    let p_value = if denom <= 0.0 {
        0.0
    } else {
        let t = rho * (df / denom).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 2");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(CorrelationResult {
        rho,
        p_value,
        n,
        category: CorrelationCategory::from_rho(rho),
    })
}

/// Vargha-Delaney Â₁₂ by exhaustive pair comparison: the probability that a
/// draw from `g1` exceeds one from `g2`, ties counting one half.
pub fn vargha_delaney(g1: &[f64], g2: &[f64]) -> Result<f64, StatsError> {
    if g1.is_empty() {
        return Err(StatsError::EmptyGroup(1));
    }
    if g2.is_empty() {
        return Err(StatsError::EmptyGroup(2));
    }
    check_finite(g1)?;
    check_finite(g2)?;
    // Doubled counts keep the sum integral.
    let mut twice_wins: u64 = 0;
    for a in g1 {
        for b in g2 {
            twice_wins += match a.partial_cmp(b) {
                Some(Ordering::Greater) => 2,
                Some(Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice_wins as f64 / (2 * g1.len() * g2.len()) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MwuOptions {
    /// Enumerate the exact permutation distribution instead of the normal
    /// approximation (limited to `n1·n2 ≤ 10,000`).
    pub exact: bool,
}

/// Two-sided Mann-Whitney U test with Â₁₂ derived from the same rank sums.
pub fn mann_whitney_u(g1: &[f64], g2: &[f64]) -> Result<EffectResult, StatsError> {
    mann_whitney_u_with(g1, g2, MwuOptions::default())
}

pub fn mann_whitney_u_with(
    g1: &[f64],
    g2: &[f64],
    opts: MwuOptions,
) -> Result<EffectResult, StatsError> {
    let (n1, n2) = (g1.len(), g2.len());
    if n1 == 0 {
        return Err(StatsError::EmptyGroup(1));
    }
    if n2 == 0 {
        return Err(StatsError::EmptyGroup(2));
    }
    check_finite(g1)?;
    check_finite(g2)?;
    if n1 + n2 < 8 {
        log::warn!("Mann-Whitney U with n1 + n2 = {} < 8: p-value is unreliable", n1 + n2);
    }

    let pooled: Vec<f64> = g1.iter().chain(g2).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum1: f64 = ranks[..n1].iter().sum();
    let pairs = (n1 * n2) as f64;
    let u1 = rank_sum1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let a12 = u1 / pairs;

    let p_value = if opts.exact {
        exact_p_value(&ranks, n1, n2)?
    } else {
        normal_p_value(u1, n1, n2, &tie_sizes(&pooled))
    };

    Ok(EffectResult {
        a12,
        u_statistic: u1,
        p_value,
        n1,
        n2,
        magnitude: EffectMagnitude::from_a12(a12),
        direction: Direction::from_a12(a12),
    })
}

fn normal_p_value(u1: f64, n1: usize, n2: usize, ties: &[usize]) -> f64 {
    let n = (n1 + n2) as f64;
    let pairs = (n1 * n2) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let variance = pairs / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        return 1.0;
    }
    let deviation = ((u1 - pairs / 2.0).abs() - 0.5).max(0.0);
    let z = deviation / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Exact two-sided p-value conditional on the observed tie structure.
///
/// Counts, over all ways of drawing the smaller group's labels from the pooled
/// ranks, how many give a rank sum at least as far from its mean as observed.
fn exact_p_value(ranks: &[f64], n1: usize, n2: usize) -> Result<f64, StatsError> {
    if n1 * n2 > EXACT_MWU_MAX_PAIRS {
        return Err(StatsError::ExactTooLarge(n1 * n2));
    }
    // Doubled average ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let (k, observed) = if n1 <= n2 {
        (n1, doubled[..n1].iter().sum::<usize>())
    } else {
        (n2, doubled[n1..].iter().sum::<usize>())
    };
    let total: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s.
    let mut ways = vec![vec![0.0f64; total + 1]; k + 1];
    ways[0][0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        reach += r;
        for j in (1..=k).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let (prev, cur) = (&lower[j - 1], &mut upper[0]);
            for s in (r..=reach).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let n = (n1 + n2) as f64;
    let mean = k as f64 * (n + 1.0);
    let observed_dev = (observed as f64 - mean).abs();
    let (mut extreme, mut all) = (0.0, 0.0);
    for (s, &w) in ways[k].iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        all += w;
        // Half-unit slack: doubled sums differ by at least 1.
        if (s as f64 - mean).abs() >= observed_dev - 0.25 {
            extreme += w;
        }
    }
    Ok((extreme / all).min(1.0))
}

/// Cohen's kappa for two raters over the same items.
pub fn cohen_kappa<T: Ord + Clone>(a: &[T], b: &[T]) -> Result<AgreementResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    let mut categories: BTreeMap<&T, usize> = BTreeMap::new();
    for label in a.iter().chain(b) {
        let next = categories.len();
        categories.entry(label).or_insert(next);
    }
    let k = categories.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (x, y) in a.iter().zip(b) {
        confusion[categories[x]][categories[y]] += 1;
    }
    kappa_from_confusion(&confusion)
}

/// Cohen's kappa from a square confusion matrix (rows: rater A, columns: rater B).
///
/// Evaluated in integer arithmetic with one final division, so closed-form
/// fixtures come out exact.
pub fn kappa_from_confusion(confusion: &[Vec<u64>]) -> Result<AgreementResult, StatsError> {
    let k = confusion.len();
    assert!(confusion.iter().all(|row| row.len() == k), "confusion matrix must be square");
    let n: u128 = confusion.iter().flatten().map(|&c| c as u128).sum();
    if n == 0 {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    let agree: u128 = (0..k).map(|i| confusion[i][i] as u128).sum();
    let chance: u128 = (0..k)
        .map(|i| {
            let row: u128 = confusion[i].iter().map(|&c| c as u128).sum();
            let col: u128 = confusion.iter().map(|r| r[i] as u128).sum();
            row * col
        })
        .sum();
    let denom = n * n - chance;
    if denom == 0 {
        return Err(StatsError::DegenerateAgreement);
    }
    let numer = (n * agree) as i128 - chance as i128;
    Ok(AgreementResult {
        kappa: numer as f64 / denom as f64,
        observed_agreement: agree as f64 / n as f64,
        n_items: n as usize,
    })
}
