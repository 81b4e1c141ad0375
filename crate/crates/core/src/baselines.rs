//! Fixed-weight rank distances used as comparison methods.
//!
//! `D_s = Σ (R_i − Q_i)²` is Spearman's distance with the constant
//! denominator dropped. `D_w` multiplies each term by
//! `(m − R_i + 1) + (m − Q_i + 1)`, so disagreements near the top count more.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::influence::{self, InfluenceError};
use crate::ranker::LooRankingSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("rank lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("ranks must be positive integers")]
    ZeroRank,
    #[error("list length must be >= 1")]
    InvalidLength,
    #[error("unknown fixed weight scheme `{0}` (expected rr or roc)")]
    UnknownScheme(String),
    #[error("unknown metric `{0}` (expected adaptive, spearman or wspearman)")]
    UnknownMetric(String),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// Two rank lists over the same `m` features.
#[derive(Debug, Clone, PartialEq)]
pub struct RankPairList {
    first: Vec<usize>,
    second: Vec<usize>,
    m: usize,
}

impl RankPairList {
    pub fn new(first: Vec<usize>, second: Vec<usize>, m: usize) -> Result<Self> {
        if first.len() != second.len() {
            return Err(BaselineError::LengthMismatch(first.len(), second.len()));
        }
        if m == 0 {
            return Err(BaselineError::InvalidLength);
        }
        if first.iter().chain(&second).any(|&r| r == 0) {
            return Err(BaselineError::ZeroRank);
        }
        Ok(Self { first, second, m })
    }

    pub fn swapped(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
            m: self.m,
        }
    }

    /// Number of ranks larger than `m` (clamped in the weighted distance).
    pub fn out_of_window(&self) -> usize {
        self.first
            .iter()
            .chain(&self.second)
            .filter(|&&r| r > self.m)
            .count()
    }

    fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.first
            .iter()
            .zip(&self.second)
            .map(|(&r, &q)| (r as f64, q as f64))
    }
}

pub fn spearman_d(pairs: &RankPairList) -> f64 {
    pairs.iter().map(|(r, q)| (r - q) * (r - q)).sum()
}

/// Weighted distance. Ranks beyond `m` are clamped to `m` in the weight term
/// only; the squared difference uses the true ranks.
pub fn weighted_spearman_d(pairs: &RankPairList) -> f64 {
    let m = pairs.m as f64;
    pairs
        .iter()
        .map(|(r, q)| (r - q) * (r - q) * ((m - r.min(m) + 1.0) + (m - q.min(m) + 1.0)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedScheme {
    /// Rank reciprocal, `1/r`.
    Rr,
    /// Rank order centroid as `100 · Σ_{i=r..n} 1/i / Σ_{i=1..n} 1/i`.
    /// Note the classical ROC divides by `n` rather than by the harmonic
    /// number; this is the scaled variant.
    Roc,
}

impl FromStr for FixedScheme {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" => Ok(Self::Rr),
            "roc" => Ok(Self::Roc),
            _ => Err(BaselineError::UnknownScheme(s.to_string())),
        }
    }
}

impl fmt::Display for FixedScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rr => "rr",
            Self::Roc => "roc",
        })
    }
}

pub fn fixed_weights(scheme: FixedScheme, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(BaselineError::InvalidLength);
    }
    Ok(match scheme {
        FixedScheme::Rr => (1..=n).map(|r| 1.0 / r as f64).collect(),
        FixedScheme::Roc => {
            // tail sums of the harmonic series, accumulated from the end
            let mut tail = vec![0.0; n + 1];
            for i in (1..=n).rev() {
                tail[i - 1] = tail[i] + 1.0 / i as f64;
            }
            (0..n).map(|r| 100.0 * tail[r] / tail[0]).collect()
        }
    })
}

/// Rank comparison used to score each deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Adaptive,
    Spearman,
    #[serde(rename = "wspearman")]
    WeightedSpearman,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Adaptive, Metric::Spearman, Metric::WeightedSpearman];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Adaptive => "adaptive",
            Metric::Spearman => "spearman",
            Metric::WeightedSpearman => "wspearman",
        }
    }
}

impl FromStr for Metric {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adaptive" => Ok(Metric::Adaptive),
            "spearman" => Ok(Metric::Spearman),
            "wspearman" => Ok(Metric::WeightedSpearman),
            _ => Err(BaselineError::UnknownMetric(s.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Spearman,
    Weighted,
}

impl BaselineMethod {
    pub fn distance(self, pairs: &RankPairList) -> f64 {
        match self {
            BaselineMethod::Spearman => spearman_d(pairs),
            BaselineMethod::Weighted => weighted_spearman_d(pairs),
        }
    }

    /// Per-feature terms of the distance.
    pub fn terms(self, first: &[usize], second: &[usize], m: usize) -> Vec<f64> {
        let m = m as f64;
        first
            .iter()
            .zip(second)
            .map(|(&r, &q)| {
                let (r, q) = (r as f64, q as f64);
                let sq = (r - q) * (r - q);
                match self {
                    BaselineMethod::Spearman => sq,
                    BaselineMethod::Weighted => sq * ((m - r.min(m) + 1.0) + (m - q.min(m) + 1.0)),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub method: BaselineMethod,
    pub raw: Vec<f64>,
    pub standardized: Vec<f64>,
    pub top_case: usize,
    /// Leave-one-out ranks that exceeded `m` and were clamped in the weight
    /// term (always 0 for the unweighted distance).
    pub clamped_ranks: usize,
}

/// Distance between the original and each leave-one-out ranking, divided by
/// the standard deviation across cases.
pub fn baseline_influence(method: BaselineMethod, loo: &LooRankingSet) -> Result<BaselineScores> {
    let m = loo.original().len();
    let original = loo.original().ranks();
    let lists = loo
        .per_case()
        .iter()
        .map(|ranks| RankPairList::new(original.clone(), ranks.clone(), m))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = lists.par_iter().map(|p| method.distance(p)).collect();
    let clamped_ranks = match method {
        BaselineMethod::Spearman => 0,
        BaselineMethod::Weighted => lists.iter().map(RankPairList::out_of_window).sum(),
    };
    let standardized = influence::standardize(&raw, false)?;
    Ok(BaselineScores {
        method,
        top_case: influence::arg_max(&raw).expect("at least two cases"),
        raw,
        standardized,
        clamped_ranks,
    })
}
