//! Seeded generator of two-group expression data with one planted
//! influential case.
//!
//! Values are on a log-expression scale: feature baselines are drawn from
//! `U(10, 14)` and samples add standard-normal noise. Signal features are
//! shifted upward by `effect_size` in every case sample. The contaminated
//! sample's signal features are shifted by `contamination` towards the other
//! group (down for a case, up for a control). Negative draws are clamped to
//! zero so the output is valid ingest input.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ExpressionMatrix, Group};
use crate::ranker::{LooRankingSet, Ranking};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_cases: usize,
    pub n_controls: usize,
    pub n_features: usize,
    pub signal_features: usize,
    /// Case-vs-control mean shift of signal features, in noise sd units.
    pub effect_size: f64,
    /// Zero-based sample index of the contaminated case.
    pub contaminated: usize,
    /// Extra shift applied to the contaminated sample's signal features.
    pub contamination: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cases: 30,
            n_controls: 30,
            n_features: 2000,
            signal_features: 20,
            effect_size: 1.0,
            contaminated: 0,
            contamination: 8.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn n_samples(&self) -> usize {
        self.n_cases + self.n_controls
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let fail = |msg: &str| Err(SyntheticError::Invalid(msg.to_string()));
        if self.n_cases < 2 || self.n_controls < 2 {
            return fail("each group needs at least 2 samples");
        }
        if self.n_features == 0 {
            return fail("n_features must be positive");
        }
        if self.signal_features > self.n_features {
            return fail("signal_features exceeds n_features");
        }
        if self.contaminated >= self.n_samples() {
            return fail("contaminated index is out of range");
        }
        if !self.effect_size.is_finite() || !self.contamination.is_finite() {
            return fail("effect size and contamination must be finite");
        }
        Ok(())
    }

    /// Cases occupy the first `n_cases` columns, controls the rest.
    pub fn label(&self, sample: usize) -> Group {
        if sample < self.n_cases {
            Group::Case
        } else {
            Group::Control
        }
    }
}

pub fn feature_id(j: usize) -> String {
    format!("gene{:05}", j + 1)
}

pub fn sample_id(s: usize) -> String {
    format!("obs{}", s + 1)
}

/// Generates the matrix described by `spec`. Signal features are the first
/// `signal_features` rows.
pub fn generate(spec: &SyntheticSpec) -> Result<ExpressionMatrix, SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_samples();
    let mut values = Array2::zeros((spec.n_features, n));
    for j in 0..spec.n_features {
        let baseline: f64 = rng.random_range(10.0..14.0);
        let signal = j < spec.signal_features;
        for s in 0..n {
            let noise: f64 = rng.sample(StandardNormal);
            let mut v = baseline + noise;
            if signal {
                if spec.label(s) == Group::Case {
                    v += spec.effect_size;
                }
                if s == spec.contaminated {
                    v += match spec.label(s) {
                        Group::Case => -spec.contamination,
                        Group::Control => spec.contamination,
                    };
                }
            }
            values[[j, s]] = v.max(0.0);
        }
    }
    let labels = (0..n).map(|s| spec.label(s)).collect();
    ExpressionMatrix::new(
        (0..spec.n_features).map(feature_id).collect(),
        (0..n).map(sample_id).collect(),
        values,
        labels,
    )
    .map_err(|e| SyntheticError::Invalid(e.to_string()))
}

/// Writes a matrix and its labels in the comma-separated ingest formats.
pub fn write_matrix(x: &ExpressionMatrix, matrix_path: &Path, label_path: &Path) -> Result<(), SyntheticError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SyntheticError::Io { path, source }
    };
    let mut out = String::with_capacity(x.n_features() * x.n_samples() * 8);
    out.push_str("feature");
    for s in x.sample_ids() {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for (j, row) in x.values().outer_iter().enumerate() {
        out.push_str(&x.feature_ids()[j]);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::File::create(matrix_path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(io(matrix_path))?;

    let mut labels = String::from("sample,group\n");
    for (s, g) in x.sample_ids().iter().zip(x.labels()) {
        labels.push_str(&format!("{s},{g}\n"));
    }
    std::fs::File::create(label_path)
        .and_then(|mut f| f.write_all(labels.as_bytes()))
        .map_err(io(label_path))?;
    Ok(())
}

/// Leave-one-out ranks built directly, with two planted disruptors.
#[derive(Debug, Clone)]
pub struct HeadTailScenario {
    pub loo: LooRankingSet,
    /// Case whose deletion moves ten top-ranked features by `head_shift`.
    pub head_case: usize,
    /// Case whose deletion moves ten bottom-ranked features by `tail_shift`.
    pub tail_case: usize,
}

/// Builds a ranking of length `m` seen by `n_cases` deletions. Background
/// deletions make a few random swaps whose reach grows with rank, so the
/// tail is less stable than the head, as in real leave-one-out rankings.
/// Each disruptor swaps five disjoint pairs, so both displace ten features:
/// the head disruptor near rank 1, the tail disruptor at the end of the list.
pub fn head_tail_scenario(
    m: usize,
    n_cases: usize,
    head_shift: usize,
    tail_shift: usize,
    seed: u64,
) -> HeadTailScenario {
    assert!(head_shift >= 5 && tail_shift >= 5, "pairs must be disjoint");
    assert!(m >= head_shift + tail_shift + 10 && n_cases >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head_case = rng.random_range(0..n_cases);
    let tail_case = loop {
        let c = rng.random_range(0..n_cases);
        if c != head_case {
            break c;
        }
    };
    let identity: Vec<usize> = (1..=m).collect();
    let per_case = (0..n_cases)
        .map(|case| {
            let mut ranks = identity.clone();
            if case == head_case {
                for p in 0..5 {
                    ranks.swap(p, p + head_shift);
                }
            } else if case == tail_case {
                let start = m - tail_shift - 5;
                for k in 0..5 {
                    let p = start + k;
                    ranks.swap(p, p + tail_shift);
                }
            } else {
                for _ in 0..8 {
                    let p = rng.random_range(0..m - 1);
                    let reach = (1 + p / 25).min(m - 1 - p);
                    let d = rng.random_range(1..=reach);
                    ranks.swap(p, p + d);
                }
            }
            ranks
        })
        .collect();
    let original = Ranking::from_ids((1..=m).map(feature_id).collect());
    HeadTailScenario {
        loo: LooRankingSet::from_parts(original, (0..n_cases).map(sample_id).collect(), per_case),
        head_case,
        tail_case,
    }
}
