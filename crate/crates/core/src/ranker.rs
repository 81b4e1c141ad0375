//! Two-sample t-test feature ranking and leave-one-out re-ranking.
//!
//! Per-group sufficient statistics (count, mean, centered sum of squares)
//! are computed once on the full data. Deleting a case downdates the
//! statistics of that case's group, so every leave-one-out ranking costs one
//! pass over the features instead of one pass over the whole matrix.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::ingest::{ExpressionMatrix, Group};

/// Downdated sums of squares below this are treated as rounding noise.
const NEGATIVE_M2_TOLERANCE: f64 = -1e-9;
/// Relative cancellation that triggers an exact recomputation.
const CANCELLATION_GUARD: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("group `{group}` has {size} samples; the t-test needs at least 2")]
    GroupTooSmall { group: Group, size: usize },
    #[error("top_m = {top_m} is outside 1..={available}")]
    TopMOutOfRange { top_m: usize, available: usize },
    #[error("deleting case {case} would leave group `{group}` with fewer than 2 samples")]
    DeletionTooSmall { case: usize, group: Group },
    #[error("ranking refers to feature `{0}`, which is not in the matrix")]
    ForeignFeature(String),
}

pub type Result<T, E = RankError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Equal variances, pooled estimate.
    Pooled,
}

impl TTestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TTestKind::Welch => "welch",
            TTestKind::Pooled => "pooled",
        }
    }
}

impl std::str::FromStr for TTestKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "welch" => Ok(TTestKind::Welch),
            "pooled" => Ok(TTestKind::Pooled),
            _ => Err(format!("unknown t-test `{s}` (expected welch or pooled)")),
        }
    }
}

impl std::fmt::Display for TTestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankOptions {
    pub test: TTestKind,
    /// Apply `log2(v + 1)` before testing.
    pub log_transform: bool,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            test: TTestKind::Welch,
            log_transform: true,
        }
    }
}

/// Count, mean and centered sum of squares of one group for one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl GroupStats {
    pub fn from_values<I: IntoIterator<Item = f64> + Clone>(values: I) -> Self {
        let (count, sum) = values
            .clone()
            .into_iter()
            .fold((0.0, 0.0), |(c, s), v| (c + 1.0, s + v));
        let mean = sum / count;
        let m2 = values.into_iter().map(|v| (v - mean) * (v - mean)).sum();
        Self { count, mean, m2 }
    }

    /// Removes one observation. Returns `None` when cancellation makes the
    /// downdated sum of squares untrustworthy.
    pub fn without(&self, x: f64) -> Option<Self> {
        let count = self.count - 1.0;
        let mean = self.mean + (self.mean - x) / count;
        let m2 = self.m2 - (x - mean) * (x - self.mean);
        if m2 < NEGATIVE_M2_TOLERANCE || m2 < CANCELLATION_GUARD * self.m2 {
            return None;
        }
        Some(Self {
            count,
            mean,
            m2: m2.max(0.0),
        })
    }

    pub fn variance(&self) -> f64 {
        self.m2 / (self.count - 1.0)
    }
}

/// Outcome of one two-sample test. `degenerate` marks zero variance in both
/// groups; such features get `t = 0`, `p = 1` and sort after everything else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub degenerate: bool,
}

impl TTest {
    pub fn from_stats(case: &GroupStats, control: &GroupStats, kind: TTestKind) -> Self {
        let (var_case, var_control) = (case.variance(), control.variance());
        if var_case == 0.0 && var_control == 0.0 {
            return Self {
                t: 0.0,
                p: 1.0,
                df: case.count + control.count - 2.0,
                degenerate: true,
            };
        }
        let diff = case.mean - control.mean;
        let (se2, df) = match kind {
            TTestKind::Welch => {
                let a = var_case / case.count;
                let b = var_control / control.count;
                let se2 = a + b;
                let df = se2 * se2
                    / (a * a / (case.count - 1.0) + b * b / (control.count - 1.0));
                (se2, df)
            }
            TTestKind::Pooled => {
                let df = case.count + control.count - 2.0;
                let pooled = (case.m2 + control.m2) / df;
                (pooled * (1.0 / case.count + 1.0 / control.count), df)
            }
        };
        let t = diff / se2.sqrt();
        Self {
            t,
            p: two_sided_p(t, df),
            df,
            degenerate: false,
        }
    }
}

/// Two-sided Student-t p-value through the regularized incomplete beta
/// function, which keeps precision for tiny p.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Ordering used for every ranking: degenerate features last, then
/// ascending p-value, then feature id.
fn rank_order(a: (&TTest, &str), b: (&TTest, &str)) -> Ordering {
    a.0.degenerate
        .cmp(&b.0.degenerate)
        .then_with(|| a.0.p.total_cmp(&b.0.p))
        .then_with(|| a.1.cmp(b.1))
}

/// Returns feature indices sorted best-first.
fn sorted_order(tests: &[TTest], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tests.len()).collect();
    order.sort_unstable_by(|&a, &b| rank_order((&tests[a], &ids[a]), (&tests[b], &ids[b])));
    order
}

/// Sufficient statistics of every feature, kept with the (transformed)
/// values needed to downdate them.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    data: Array2<f64>,
    labels: Vec<Group>,
    case: Vec<GroupStats>,
    control: Vec<GroupStats>,
    kind: TTestKind,
}

impl FeatureStats {
    pub fn new(x: &ExpressionMatrix, options: RankOptions) -> Result<Self> {
        for group in [Group::Case, Group::Control] {
            let size = x.group_size(group);
            if size < 2 {
                return Err(RankError::GroupTooSmall { group, size });
            }
        }
        let data = if options.log_transform {
            x.values().mapv(|v| (v + 1.0).log2())
        } else {
            x.values().clone()
        };
        let labels = x.labels().to_vec();
        let (case, control) = data
            .outer_iter()
            .map(|row| {
                (
                    group_stats(row, &labels, Group::Case, None),
                    group_stats(row, &labels, Group::Control, None),
                )
            })
            .unzip();
        Ok(Self {
            data,
            labels,
            case,
            control,
            kind: options.test,
        })
    }

    pub fn n_features(&self) -> usize {
        self.case.len()
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    /// Tests on the full data.
    pub fn full(&self) -> Vec<TTest> {
        self.case
            .iter()
            .zip(&self.control)
            .map(|(a, b)| TTest::from_stats(a, b, self.kind))
            .collect()
    }

    /// Tests with sample `case` removed, using downdated statistics.
    pub fn without_case(&self, case: usize) -> Result<Vec<TTest>> {
        let group = self.labels[case];
        let remaining = self.labels.iter().filter(|&&g| g == group).count() - 1;
        if remaining < 2 {
            return Err(RankError::DeletionTooSmall { case, group });
        }
        let tests = (0..self.n_features())
            .map(|j| {
                let full = match group {
                    Group::Case => &self.case[j],
                    Group::Control => &self.control[j],
                };
                let row = self.data.row(j);
                let reduced = full
                    .without(row[case])
                    .unwrap_or_else(|| group_stats(row, &self.labels, group, Some(case)));
                match group {
                    Group::Case => TTest::from_stats(&reduced, &self.control[j], self.kind),
                    Group::Control => TTest::from_stats(&self.case[j], &reduced, self.kind),
                }
            })
            .collect();
        Ok(tests)
    }
}

fn group_stats(row: ArrayView1<'_, f64>, labels: &[Group], group: Group, skip: Option<usize>) -> GroupStats {
    let values = row
        .iter()
        .zip(labels)
        .enumerate()
        .filter(move |&(s, (_, &g))| g == group && Some(s) != skip)
        .map(|(_, (&v, _))| v);
    GroupStats::from_values(values)
}

/// Features ordered by ascending p-value; rank `k` is position `k - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    feature_ids: Vec<String>,
    rows: Vec<usize>,
    tests: Vec<TTest>,
    options: RankOptions,
}

impl Ranking {
    /// A ranking of the given ids in order, without test statistics
    /// (for rank lists produced outside the t-test pipeline).
    pub fn from_ids(feature_ids: Vec<String>) -> Self {
        let n = feature_ids.len();
        Self {
            rows: (0..n).collect(),
            tests: vec![
                TTest {
                    t: f64::NAN,
                    p: f64::NAN,
                    df: f64::NAN,
                    degenerate: false,
                };
                n
            ],
            feature_ids,
            options: RankOptions::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_ids.is_empty()
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    /// Matrix row of each ranked feature.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn tests(&self) -> &[TTest] {
        &self.tests
    }

    pub fn options(&self) -> RankOptions {
        self.options
    }

    /// Original ranks `1..=m`.
    pub fn ranks(&self) -> Vec<usize> {
        (1..=self.len()).collect()
    }
}

/// Ranks all features of `x` and keeps the best `top_m`.
pub fn t_rank(x: &ExpressionMatrix, top_m: usize, options: RankOptions) -> Result<Ranking> {
    if top_m == 0 || top_m > x.n_features() {
        return Err(RankError::TopMOutOfRange {
            top_m,
            available: x.n_features(),
        });
    }
    let stats = FeatureStats::new(x, options)?;
    Ok(ranking_from_stats(x, &stats, top_m, options))
}

fn ranking_from_stats(x: &ExpressionMatrix, stats: &FeatureStats, top_m: usize, options: RankOptions) -> Ranking {
    let tests = stats.full();
    let order = sorted_order(&tests, x.feature_ids());
    let rows: Vec<usize> = order.into_iter().take(top_m).collect();
    Ranking {
        feature_ids: rows.iter().map(|&r| x.feature_ids()[r].clone()).collect(),
        tests: rows.iter().map(|&r| tests[r]).collect(),
        rows,
        options,
    }
}

/// The original ranking plus, for every deleted case, the global ranks of the
/// same features in the re-ranked data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRankingSet {
    original: Ranking,
    case_ids: Vec<String>,
    per_case: Vec<Vec<usize>>,
}

impl LooRankingSet {
    /// Assembles a set from precomputed ranks (`per_case[i][j]` is the rank
    /// of original feature `j` after deleting case `i`).
    pub fn from_parts(original: Ranking, case_ids: Vec<String>, per_case: Vec<Vec<usize>>) -> Self {
        assert_eq!(case_ids.len(), per_case.len(), "one rank list per case");
        assert!(per_case.iter().all(|r| r.len() == original.len()));
        Self {
            original,
            case_ids,
            per_case,
        }
    }

    pub fn original(&self) -> &Ranking {
        &self.original
    }

    pub fn case_ids(&self) -> &[String] {
        &self.case_ids
    }

    pub fn n_cases(&self) -> usize {
        self.per_case.len()
    }

    pub fn per_case(&self) -> &[Vec<usize>] {
        &self.per_case
    }

    pub fn case_ranks(&self, case: usize) -> &[usize] {
        &self.per_case[case]
    }

    /// True when no deletion moved any selected feature.
    pub fn is_stable(&self) -> bool {
        self.per_case
            .iter()
            .all(|ranks| ranks.iter().enumerate().all(|(j, &r)| r == j + 1))
    }
}

/// Recomputes the ranking once per deleted case.
///
/// Deletions run on the current rayon pool; results are ordered by case
/// index, so the output does not depend on the number of threads.
pub fn loo_rankings(x: &ExpressionMatrix, selected: &Ranking) -> Result<LooRankingSet> {
    let stats = FeatureStats::new(x, selected.options)?;
    for (id, &row) in selected.feature_ids.iter().zip(&selected.rows) {
        if x.feature_ids().get(row) != Some(id) {
            return Err(RankError::ForeignFeature(id.clone()));
        }
    }
    let per_case = (0..x.n_samples())
        .into_par_iter()
        .map(|case| {
            let tests = stats.without_case(case)?;
            let order = sorted_order(&tests, x.feature_ids());
            let mut rank_of = vec![0usize; order.len()];
            for (pos, &row) in order.iter().enumerate() {
                rank_of[row] = pos + 1;
            }
            Ok(selected.rows.iter().map(|&row| rank_of[row]).collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Ok(LooRankingSet {
        original: selected.clone(),
        case_ids: x.sample_ids().to_vec(),
        per_case,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labelled(values: Array2<f64>, labels: Vec<Group>) -> ExpressionMatrix {
        let (m, n) = values.dim();
        ExpressionMatrix::new(
            (0..m).map(|j| format!("f{j:03}")).collect(),
            (0..n).map(|s| format!("s{s}")).collect(),
            values,
            labels,
        )
        .unwrap()
    }

    const RAW: RankOptions = RankOptions {
        test: TTestKind::Welch,
        log_transform: false,
    };

    #[test]
    fn welch_matches_hand_computation() {
        // case [1,2,3] mean 2 var 1; control [4,6] mean 5 var 2
        let a = GroupStats::from_values([1.0, 2.0, 3.0]);
        let b = GroupStats::from_values([4.0, 6.0]);
        let t = TTest::from_stats(&a, &b, TTestKind::Welch);
        let se = (1.0f64 / 3.0 + 2.0 / 2.0).sqrt();
        assert!((t.t - (-3.0 / se)).abs() < 1e-14);
        let df = (4.0f64 / 3.0).powi(2) / ((1.0f64 / 3.0).powi(2) / 2.0 + 1.0);
        assert!((t.df - df).abs() < 1e-12);

        let pooled = TTest::from_stats(&a, &b, TTestKind::Pooled);
        let sp2 = (2.0 + 2.0) / 3.0;
        let se = (sp2 * (1.0 / 3.0 + 0.5f64)).sqrt();
        assert!((pooled.t - (-3.0 / se)).abs() < 1e-14);
        assert_eq!(pooled.df, 3.0);
    }

    #[test]
    fn p_value_reference_points() {
        // t = 2.228139 is the 97.5% quantile of t(10)
        assert!((two_sided_p(2.228_138_851_986_27, 10.0) - 0.05).abs() < 1e-9);
        // t(1) is Cauchy: P(|T| > 1) = 0.5
        assert!((two_sided_p(1.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(two_sided_p(0.0, 5.0), 1.0);
        assert!(two_sided_p(60.0, 40.0) > 0.0);
    }

    #[test]
    fn downdate_matches_recompute() {
        let xs = [3.5, 1.25, 9.0, 4.0, 7.5];
        let full = GroupStats::from_values(xs);
        for k in 0..xs.len() {
            let rest: Vec<f64> = xs.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &v)| v).collect();
            let want = GroupStats::from_values(rest.iter().copied());
            let got = full.without(xs[k]).unwrap();
            assert!((got.mean - want.mean).abs() < 1e-13);
            assert!((got.m2 - want.m2).abs() < 1e-12);
        }
    }

    #[test]
    fn cancellation_falls_back() {
        let full = GroupStats::from_values([5.0, 5.0, 5.0, 1e6]);
        assert!(full.without(1e6).is_none());
    }

    #[test]
    fn zero_variance_feature_ranks_last() {
        let labels = vec![Group::Case, Group::Case, Group::Control, Group::Control];
        let x = labelled(
            array![[3., 3., 3., 3.], [1., 2., 3., 4.], [1., 1.5, 1., 1.2]],
            labels,
        );
        let r = t_rank(&x, 3, RAW).unwrap();
        assert_eq!(r.feature_ids()[2], "f000");
        assert_eq!(r.tests()[2].p, 1.0);
        assert_eq!(r.tests()[2].t, 0.0);
        assert!(r.tests()[2].degenerate);
    }

    #[test]
    fn ties_break_on_feature_id() {
        let labels = vec![Group::Case, Group::Case, Group::Control, Group::Control];
        let row = [1., 2., 3., 5.];
        let values = Array2::from_shape_fn((3, 4), |(_, s)| row[s]);
        let x = ExpressionMatrix::new(
            vec!["b".into(), "c".into(), "a".into()],
            (0..4).map(|s| format!("s{s}")).collect(),
            values,
            labels,
        )
        .unwrap();
        let r = t_rank(&x, 3, RAW).unwrap();
        assert_eq!(r.feature_ids(), ["a", "b", "c"]);
    }

    #[test]
    fn argument_validation() {
        let x = labelled(
            array![[1., 2., 3.]],
            vec![Group::Case, Group::Control, Group::Control],
        );
        assert!(matches!(
            t_rank(&x, 1, RAW),
            Err(RankError::GroupTooSmall { group: Group::Case, size: 1 })
        ));
        let x = labelled(
            array![[1., 2., 3., 4.]],
            vec![Group::Case, Group::Case, Group::Control, Group::Control],
        );
        assert!(matches!(t_rank(&x, 2, RAW), Err(RankError::TopMOutOfRange { .. })));
        assert!(matches!(t_rank(&x, 0, RAW), Err(RankError::TopMOutOfRange { .. })));
        let r = t_rank(&x, 1, RAW).unwrap();
        assert!(matches!(
            loo_rankings(&x, &r),
            Err(RankError::DeletionTooSmall { case: 0, group: Group::Case })
        ));
    }

    #[test]
    fn identical_cases_are_exchangeable() {
        let labels = vec![
            Group::Case,
            Group::Case,
            Group::Case,
            Group::Control,
            Group::Control,
            Group::Control,
        ];
        let x = labelled(
            array![
                [5., 7., 7., 1., 2., 1.5],
                [2., 4., 4., 3., 3.5, 2.],
                [9., 1., 1., 4., 6., 5.],
                [3., 8., 8., 3., 3.1, 2.8],
            ],
            labels,
        );
        let r = t_rank(&x, 4, RAW).unwrap();
        let loo = loo_rankings(&x, &r).unwrap();
        assert_eq!(loo.case_ranks(1), loo.case_ranks(2));
    }

    #[test]
    fn loo_ranks_are_permutation_subsets() {
        let labels: Vec<Group> = (0..8)
            .map(|s| if s < 4 { Group::Case } else { Group::Control })
            .collect();
        let values = Array2::from_shape_fn((12, 8), |(j, s)| ((j * 7 + s * 13) % 17) as f64 + (s < 4) as u8 as f64 * j as f64 * 0.1);
        let x = labelled(values, labels);
        let r = t_rank(&x, 5, RAW).unwrap();
        let loo = loo_rankings(&x, &r).unwrap();
        assert_eq!(loo.n_cases(), 8);
        for ranks in loo.per_case() {
            let mut sorted = ranks.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 5);
            assert!(sorted.iter().all(|&v| (1..=12).contains(&v)));
        }
    }
}
