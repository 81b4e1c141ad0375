//! Normalized exponential rank weights and the data-driven choice of their
//! steepness.
//!
//! For a list of length `m` the weight of rank `x` is
//!
//! ```text
//! w(x) = (e^κ - 1) / (1 - e^(-κ m)) · e^(-κ x)
//! ```
//!
//! which sums to one over `x = 1..=m` for every `κ > 0` and tends to `1/m`
//! as `κ → 0`. `κ` is chosen to maximize an R²-style agreement between the
//! weighted original ranks and the weighted leave-one-out ranks of every
//! feature that moved.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranker::LooRankingSet;

pub const DEFAULT_KAPPA_MIN: f64 = 1e-6;
pub const DEFAULT_KAPPA_MAX: f64 = 10.0;
pub const DEFAULT_KAPPA_TOL: f64 = 1e-8;
const COARSE_GRID_POINTS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("kappa must be finite and > 0, got {0}")]
    InvalidKappa(f64),
    #[error("list length must be >= 1")]
    InvalidLength,
    #[error("invalid rank pair ({original}, {loo}) for list length {m}")]
    InvalidPair { original: usize, loo: usize, m: usize },
    #[error("the change set is empty")]
    EmptyChangeSet,
    #[error("the weighted leave-one-out ranks have zero variance")]
    ZeroVariance,
    #[error("invalid kappa bracket [{lo}, {hi}] with tolerance {tol}")]
    InvalidBracket { lo: f64, hi: f64, tol: f64 },
    #[error("the fitting objective is undefined over the whole bracket")]
    ObjectiveUndefined,
}

pub type Result<T, E = WeightError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightModel {
    kappa: f64,
    m: usize,
    normalizer: f64,
}

impl WeightModel {
    pub fn new(kappa: f64, m: usize) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(WeightError::InvalidKappa(kappa));
        }
        if m == 0 {
            return Err(WeightError::InvalidLength);
        }
        // -(1 - e^κ) / (1 - e^{-κm}), written with expm1 so small κ stays exact
        let normalizer = kappa.exp_m1() / -(-kappa * m as f64).exp_m1();
        Ok(Self { kappa, m, normalizer })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Weight of rank `x`. Ranks beyond `m` follow the same curve.
    pub fn weight(&self, x: usize) -> f64 {
        self.normalizer * (-self.kappa * x as f64).exp()
    }

    /// Weights of ranks `1..=m`.
    pub fn curve(&self) -> Vec<f64> {
        (1..=self.m).map(|x| self.weight(x)).collect()
    }
}

/// One feature that moved when a case was deleted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RankChange {
    pub original: usize,
    pub loo: usize,
    pub case: usize,
}

/// Rank changes pooled over every deletion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankChangeSet {
    pairs: Vec<RankChange>,
    m: usize,
}

impl RankChangeSet {
    pub fn new(pairs: Vec<RankChange>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(WeightError::InvalidLength);
        }
        if let Some(bad) = pairs
            .iter()
            .find(|p| p.original == 0 || p.original > m || p.loo == 0 || p.loo == p.original)
        {
            return Err(WeightError::InvalidPair {
                original: bad.original,
                loo: bad.loo,
                m,
            });
        }
        Ok(Self { pairs, m })
    }

    /// Collects every `(original, loo)` pair that differs, in case order.
    pub fn from_loo(loo: &LooRankingSet) -> Self {
        let pairs = loo
            .per_case()
            .iter()
            .enumerate()
            .flat_map(|(case, ranks)| {
                ranks
                    .iter()
                    .enumerate()
                    .filter(|&(j, &r)| r != j + 1)
                    .map(move |(j, &r)| RankChange {
                        original: j + 1,
                        loo: r,
                        case,
                    })
            })
            .collect();
        Self {
            pairs,
            m: loo.original().len(),
        }
    }

    pub fn pairs(&self) -> &[RankChange] {
        &self.pairs
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn condensed(&self) -> Condensed {
        Condensed::new(&self.pairs)
    }
}

/// Distinct `(original, loo)` pairs with multiplicities, in sorted order.
/// Working on this form makes the objective independent of pair order.
struct Condensed {
    pairs: Vec<(f64, f64, f64)>,
    min_rank: f64,
}

impl Condensed {
    fn new(pairs: &[RankChange]) -> Self {
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for p in pairs {
            *counts.entry((p.original, p.loo)).or_default() += 1;
        }
        let min_rank = pairs
            .iter()
            .map(|p| p.original.min(p.loo))
            .min()
            .unwrap_or(1) as f64;
        Self {
            pairs: counts
                .into_iter()
                .map(|((o, l), c)| (o as f64, l as f64, c as f64))
                .collect(),
            min_rank,
        }
    }

    /// `1 - SSE / SST`. Every weight shares the factor `normalizer·e^{-κ r}`
    /// (with `r` the smallest rank present), which cancels in the ratio, so
    /// weights are evaluated as `e^{-κ(x - r)} - 1` to avoid underflow at
    /// large κ and cancellation at small κ.
    fn r_squared(&self, kappa: f64) -> Result<f64> {
        if self.pairs.is_empty() {
            return Err(WeightError::EmptyChangeSet);
        }
        let shifted = |x: f64| (-kappa * (x - self.min_rank)).exp_m1();
        let mut total = 0.0;
        let mut sum = 0.0;
        let mut sse = 0.0;
        for &(original, loo, count) in &self.pairs {
            let observed = shifted(loo);
            let predicted = shifted(original);
            total += count;
            sum += count * observed;
            sse += count * (predicted - observed) * (predicted - observed);
        }
        let mean = sum / total;
        let sst: f64 = self
            .pairs
            .iter()
            .map(|&(_, loo, count)| {
                let d = shifted(loo) - mean;
                count * d * d
            })
            .sum();
        if !(sst.is_finite() && sst > 0.0) {
            return Err(WeightError::ZeroVariance);
        }
        Ok(1.0 - sse / sst)
    }
}

/// Agreement between weighted original ranks (predictions) and weighted
/// leave-one-out ranks (observations) over the pooled change set.
pub fn r_squared(changes: &RankChangeSet, kappa: f64) -> Result<f64> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(WeightError::InvalidKappa(kappa));
    }
    changes.condensed().r_squared(kappa)
}

/// Finds the κ in `[lo, hi]` maximizing [`r_squared`].
///
/// A log-spaced coarse grid picks the best cell, then golden-section search
/// refines on `ln κ` until the bracket is narrower than `tol`.
pub fn fit_kappa(changes: &RankChangeSet, lo: f64, hi: f64, tol: f64) -> Result<WeightModel> {
    if !(lo > 0.0 && hi > lo && hi.is_finite() && tol > 0.0) {
        return Err(WeightError::InvalidBracket { lo, hi, tol });
    }
    if changes.is_empty() {
        return Err(WeightError::EmptyChangeSet);
    }
    let condensed = changes.condensed();
    let objective = |log_kappa: f64| match condensed.r_squared(log_kappa.exp()) {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    };

    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    let step = (log_hi - log_lo) / (COARSE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..COARSE_GRID_POINTS)
        .map(|k| log_lo + step * k as f64)
        .collect();
    let values: Vec<f64> = grid.par_iter().map(|&g| objective(g)).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (k, &v)| if v > values[b] { k } else { b });
    if values[best] == f64::NEG_INFINITY {
        return Err(WeightError::ObjectiveUndefined);
    }

    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(COARSE_GRID_POINTS - 1)];
    let (refined, refined_value) = golden_section_max(&objective, a, b, tol);
    let log_kappa = if refined_value >= values[best] {
        refined
    } else {
        grid[best]
    };
    WeightModel::new(log_kappa.exp().clamp(lo, hi), changes.m())
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
fn golden_section_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, fx), |best, cand| if cand.1 > best.1 { cand } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn change(original: usize, loo: usize) -> RankChange {
        RankChange {
            original,
            loo,
            case: 0,
        }
    }

    fn truncated_4dp(v: f64) -> f64 {
        (v * 1e4).floor() / 1e4
    }

    #[test]
    fn lusc_weights_at_four_decimals() {
        // reference values are truncated, not rounded: w(2) = 0.011393
        let model = WeightModel::new(0.010, 200).unwrap();
        for (x, want) in [(1, 0.0115), (2, 0.0113), (5, 0.0110), (20, 0.0095)] {
            assert!((truncated_4dp(model.weight(x)) - want).abs() < 1e-12, "rank {x}");
            assert!((model.weight(x) - want).abs() < 1e-4);
        }
    }

    #[test]
    fn small_kappa_tends_to_uniform() {
        let model = WeightModel::new(1e-8, 200).unwrap();
        for x in 1..=200 {
            assert!((model.weight(x) * 200.0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ranks_beyond_the_list_keep_decreasing() {
        let model = WeightModel::new(0.05, 20).unwrap();
        assert!(model.weight(21) < model.weight(20));
        assert!(model.weight(400) > 0.0);
    }

    #[test]
    fn invalid_models() {
        assert_eq!(WeightModel::new(0.0, 5), Err(WeightError::InvalidKappa(0.0)));
        assert!(WeightModel::new(f64::NAN, 5).is_err());
        assert_eq!(WeightModel::new(0.1, 0), Err(WeightError::InvalidLength));
    }

    #[test]
    fn r_squared_two_pair_closed_form() {
        let set = RankChangeSet::new(vec![change(1, 2), change(2, 1)], 200).unwrap();
        for kappa in [0.001, 0.01, 0.3, 2.0] {
            let m = WeightModel::new(kappa, 200).unwrap();
            let (w1, w2) = (m.weight(1), m.weight(2));
            // residuals ±(w1 - w2); observed {w2, w1} deviate ±(w1 - w2)/2 from their mean
            let sse = 2.0 * (w1 - w2).powi(2);
            let sst = 2.0 * ((w1 - w2) / 2.0).powi(2);
            let want = 1.0 - sse / sst;
            assert!((r_squared(&set, kappa).unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn r_squared_errors() {
        let empty = RankChangeSet::new(vec![], 10).unwrap();
        assert_eq!(r_squared(&empty, 0.1), Err(WeightError::EmptyChangeSet));
        let flat = RankChangeSet::new(vec![change(1, 3), change(2, 3)], 10).unwrap();
        assert_eq!(r_squared(&flat, 0.1), Err(WeightError::ZeroVariance));
        assert!(r_squared(&flat, 0.0).is_err());
        assert!(RankChangeSet::new(vec![change(2, 2)], 10).is_err());
        assert!(RankChangeSet::new(vec![change(11, 2)], 10).is_err());
    }

    #[test]
    fn fit_rejects_bad_brackets() {
        let set = RankChangeSet::new(vec![change(1, 2), change(3, 1)], 10).unwrap();
        assert!(matches!(fit_kappa(&set, 0.0, 1.0, 1e-8), Err(WeightError::InvalidBracket { .. })));
        assert!(matches!(fit_kappa(&set, 1.0, 0.5, 1e-8), Err(WeightError::InvalidBracket { .. })));
        let empty = RankChangeSet::new(vec![], 10).unwrap();
        assert_eq!(fit_kappa(&empty, 1e-6, 10.0, 1e-8), Err(WeightError::EmptyChangeSet));
        let flat = RankChangeSet::new(vec![change(1, 3), change(2, 3)], 10).unwrap();
        assert_eq!(fit_kappa(&flat, 1e-6, 10.0, 1e-8), Err(WeightError::ObjectiveUndefined));
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_section_max(&|x: f64| -(x - 0.3).powi(2), -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!(fx <= 0.0 && fx > -1e-15);
    }
}
