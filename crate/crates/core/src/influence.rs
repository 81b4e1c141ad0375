//! Per-case total weighted rank change and gap-based flagging of a
//! candidate influential point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranker::LooRankingSet;
use crate::weights::WeightModel;

/// Default gap (in standard deviations) above which the top case is labelled
/// a candidate.
pub const DEFAULT_GAP_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfluenceError {
    #[error("rank lists differ in length ({original} vs {loo})")]
    LengthMismatch { original: usize, loo: usize },
    #[error("need at least {needed} scores, got {got}")]
    TooFewScores { needed: usize, got: usize },
    #[error("scores have zero standard deviation")]
    ZeroDeviation,
}

pub type Result<T, E = InfluenceError> = std::result::Result<T, E>;

/// `Σ_j (w(original_j) − w(loo_j))²`. Unchanged ranks contribute nothing.
pub fn total_rank_change(model: &WeightModel, original: &[usize], loo: &[usize]) -> Result<f64> {
    if original.len() != loo.len() {
        return Err(InfluenceError::LengthMismatch {
            original: original.len(),
            loo: loo.len(),
        });
    }
    Ok(original
        .iter()
        .zip(loo)
        .filter(|(a, b)| a != b)
        .map(|(&a, &b)| {
            let d = model.weight(a) - model.weight(b);
            d * d
        })
        .sum())
}

/// Per-feature contributions to [`total_rank_change`], in feature order.
pub fn rank_change_terms(model: &WeightModel, original: &[usize], loo: &[usize]) -> Vec<f64> {
    original
        .iter()
        .zip(loo)
        .map(|(&a, &b)| {
            if a == b {
                0.0
            } else {
                (model.weight(a) - model.weight(b)).powi(2)
            }
        })
        .collect()
}

/// Scores of every deletion, in case order.
pub fn case_scores(model: &WeightModel, loo: &LooRankingSet) -> Vec<f64> {
    let original = loo.original().ranks();
    loo.per_case()
        .par_iter()
        .map(|ranks| total_rank_change(model, &original, ranks).expect("rank lists share a feature set"))
        .collect()
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Divides by the sample standard deviation; with `centered`, subtracts the
/// mean first (z-scores).
pub fn standardize(scores: &[f64], centered: bool) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(InfluenceError::TooFewScores {
            needed: 2,
            got: scores.len(),
        });
    }
    let sd = sample_sd(scores);
    if !(sd.is_finite() && sd > 0.0) {
        return Err(InfluenceError::ZeroDeviation);
    }
    let shift = if centered {
        scores.iter().sum::<f64>() / scores.len() as f64
    } else {
        0.0
    };
    Ok(scores.iter().map(|s| (s - shift) / sd).collect())
}

/// Index of the largest score; the first one wins ties.
pub fn arg_max(scores: &[f64]) -> Option<usize> {
    (0..scores.len()).fold(None, |best, k| match best {
        Some(b) if scores[b] >= scores[k] => Some(b),
        _ => Some(k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectOptions {
    pub gap_threshold: f64,
    pub centered: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            centered: false,
        }
    }
}

/// Scores, standardized scores and the single flagged case of one run.
///
/// The flagged case is only ever a candidate: a large gap suggests, but does
/// not establish, that the case is influential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub case_ids: Vec<String>,
    pub raw_scores: Vec<f64>,
    pub std_scores: Vec<f64>,
    /// Zero-based index of the arg-max case.
    pub top_case: usize,
    /// `(max − second max) / sd`.
    pub gap: f64,
    /// `gap ≥ threshold`.
    pub candidate: bool,
    /// The runner-up is itself separated from the rest while the top gap is
    /// small, so more than one case may be influential.
    pub possible_multiple: bool,
    pub gap_threshold: f64,
}

impl InfluenceReport {
    pub fn top_case_id(&self) -> &str {
        &self.case_ids[self.top_case]
    }
}

pub fn detect_ip(scores: Vec<f64>, case_ids: Vec<String>, options: DetectOptions) -> Result<InfluenceReport> {
    if scores.len() < 3 {
        return Err(InfluenceError::TooFewScores {
            needed: 3,
            got: scores.len(),
        });
    }
    if case_ids.len() != scores.len() {
        return Err(InfluenceError::LengthMismatch {
            original: scores.len(),
            loo: case_ids.len(),
        });
    }
    let std_scores = standardize(&scores, options.centered)?;
    let sd = sample_sd(&scores);
    let mut sorted = scores.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let gap = (sorted[0] - sorted[1]) / sd;
    let runner_up_gap = (sorted[1] - sorted[2]) / sd;
    let candidate = gap >= options.gap_threshold;
    Ok(InfluenceReport {
        top_case: arg_max(&scores).expect("non-empty"),
        case_ids,
        raw_scores: scores,
        std_scores,
        gap,
        candidate,
        possible_multiple: !candidate && runner_up_gap >= options.gap_threshold,
        gap_threshold: options.gap_threshold,
    })
}

/// Scores every deletion in `loo` under `model` and flags the top case.
pub fn assess(model: &WeightModel, loo: &LooRankingSet, options: DetectOptions) -> Result<InfluenceReport> {
    detect_ip(case_scores(model, loo), loo.case_ids().to_vec(), options)
}
