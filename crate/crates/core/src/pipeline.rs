//! End-to-end runs: preprocessing, ranking, κ fitting, scoring and artifact
//! output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError, BaselineMethod, FixedScheme, Metric};
use crate::influence::{self, DetectOptions, InfluenceError, InfluenceReport};
use crate::ingest::{self, ExpressionMatrix, IngestError};
use crate::plot;
use crate::ranker::{self, LooRankingSet, RankError, RankOptions, TTestKind};
use crate::report::{self, DetectReport, FlaggedCase, KappaSummary, ToolInfo};
use crate::synthetic::{self, SyntheticError, SyntheticSpec};
use crate::weights::{self, RankChangeSet, WeightError, WeightModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("no feature changed rank in any leave-one-out ranking")]
    NoRankChanges,
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot start worker threads: {0}")]
    Threads(String),
}

impl PipelineError {
    /// 2 input validation, 3 degenerate statistics, 4 optimization failure,
    /// 1 anything else (output I/O, thread pool).
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Ingest(_) | PipelineError::Synthetic(SyntheticError::Invalid(_)) => 2,
            PipelineError::Rank(RankError::DeletionTooSmall { .. }) => 3,
            PipelineError::Rank(_) => 2,
            PipelineError::Weight(WeightError::ObjectiveUndefined) => 4,
            PipelineError::Weight(WeightError::EmptyChangeSet | WeightError::ZeroVariance) => 3,
            PipelineError::Weight(_) => 2,
            PipelineError::Influence(InfluenceError::LengthMismatch { .. }) => 2,
            PipelineError::Influence(_) => 3,
            PipelineError::Baseline(BaselineError::Influence(_)) => 3,
            PipelineError::Baseline(_) => 2,
            PipelineError::NoRankChanges => 3,
            PipelineError::Synthetic(SyntheticError::Io { .. }) | PipelineError::Output { .. } | PipelineError::Threads(_) => 1,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub const DEFAULT_TOP_M: usize = 200;

/// Effective settings of a `detect` or `compare` run. Everything except the
/// output directory and thread count is echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub matrix: PathBuf,
    pub labels: PathBuf,
    pub exclude: Option<PathBuf>,
    pub delimiter: Option<char>,
    pub top_m: usize,
    pub metric: Metric,
    pub test: TTestKind,
    pub log_transform: bool,
    pub cpm: bool,
    pub filter_low_expressed: bool,
    pub kappa: Option<f64>,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub kappa_tol: f64,
    pub balance_ratio: Option<usize>,
    pub seed: Option<u64>,
    pub gap_threshold: f64,
    pub centered: bool,
    pub fixed_weights: Option<FixedScheme>,
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            matrix: PathBuf::new(),
            labels: PathBuf::new(),
            exclude: None,
            delimiter: None,
            top_m: DEFAULT_TOP_M,
            metric: Metric::Adaptive,
            test: TTestKind::Welch,
            log_transform: true,
            cpm: true,
            filter_low_expressed: true,
            kappa: None,
            kappa_min: weights::DEFAULT_KAPPA_MIN,
            kappa_max: weights::DEFAULT_KAPPA_MAX,
            kappa_tol: weights::DEFAULT_KAPPA_TOL,
            balance_ratio: None,
            seed: None,
            gap_threshold: influence::DEFAULT_GAP_THRESHOLD,
            centered: false,
            fixed_weights: None,
            threads: None,
            out_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(PipelineError::Config(msg));
        if self.top_m == 0 {
            return fail("top_m must be >= 1".into());
        }
        if let Some(k) = self.kappa {
            if !(k.is_finite() && k > 0.0) {
                return fail(format!("kappa must be > 0, got {k}"));
            }
        }
        if !(self.kappa_min > 0.0 && self.kappa_max > self.kappa_min && self.kappa_max.is_finite()) {
            return fail(format!(
                "kappa bracket must satisfy 0 < min < max, got [{}, {}]",
                self.kappa_min, self.kappa_max
            ));
        }
        if !(self.kappa_tol.is_finite() && self.kappa_tol > 0.0) {
            return fail("kappa_tol must be > 0".into());
        }
        if self.balance_ratio == Some(0) {
            return fail("balance ratio must be >= 1".into());
        }
        if self.balance_ratio.is_some() && self.seed.is_none() {
            return fail("a seed is required when group balancing is enabled".into());
        }
        if !(self.gap_threshold.is_finite() && self.gap_threshold >= 0.0) {
            return fail("gap_threshold must be finite and >= 0".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be >= 1".into());
        }
        if let Some(d) = self.delimiter {
            if !d.is_ascii() {
                return fail(format!("delimiter must be a single ASCII character, got {d:?}"));
            }
        }
        Ok(())
    }

    fn rank_options(&self) -> RankOptions {
        RankOptions {
            test: self.test,
            log_transform: self.log_transform,
        }
    }

    fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            gap_threshold: self.gap_threshold,
            centered: self.centered,
        }
    }
}

/// Runs `f` on a pool with the configured number of threads.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| PipelineError::Threads(e.to_string()))?;
    pool.install(f)
}

/// Loads and preprocesses the input matrix.
pub fn prepare(config: &RunConfig) -> Result<ExpressionMatrix> {
    let delimiter = config.delimiter.map(|c| c as u8);
    let mut x = ingest::load_matrix(&config.matrix, &config.labels, delimiter)?;
    if let Some(path) = &config.exclude {
        x = ingest::exclude_features(&x, &ingest::load_id_list(path)?)?;
    }
    if config.filter_low_expressed {
        x = ingest::filter_low_expressed(&x)?;
    }
    if config.cpm {
        x = ingest::cpm_normalize(&x)?;
    }
    if let Some(ratio) = config.balance_ratio {
        let seed = config
            .seed
            .ok_or_else(|| PipelineError::Config("balancing needs a seed".into()))?;
        x = ingest::balance_groups(&x, ratio, seed)?;
    }
    Ok(x)
}

/// Everything computed by a run, before anything is written.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub n_features_tested: usize,
    pub loo: LooRankingSet,
    pub changes: RankChangeSet,
    /// `None` only when nothing moved and no κ override was given.
    pub model: Option<WeightModel>,
    pub r_squared: Option<f64>,
}

impl Analysis {
    pub fn kappa_summary(&self, overridden: bool) -> Option<KappaSummary> {
        self.model.map(|m| {
            KappaSummary::new(m.kappa(), if overridden { "override" } else { "fitted" }, self.r_squared)
        })
    }
}

/// Ranks, re-ranks and fits κ (unless overridden).
pub fn analyze(x: &ExpressionMatrix, config: &RunConfig) -> Result<Analysis> {
    let ranking = ranker::t_rank(x, config.top_m, config.rank_options())?;
    let loo = ranker::loo_rankings(x, &ranking)?;
    analyze_rankings(x.n_features(), loo, config)
}

/// The part of [`analyze`] that starts from leave-one-out rankings.
pub fn analyze_rankings(n_features_tested: usize, loo: LooRankingSet, config: &RunConfig) -> Result<Analysis> {
    let changes = RankChangeSet::from_loo(&loo);
    let m = loo.original().len();
    let model = match config.kappa {
        Some(k) => Some(WeightModel::new(k, m)?),
        None if changes.is_empty() => None,
        None => Some(weights::fit_kappa(&changes, config.kappa_min, config.kappa_max, config.kappa_tol)?),
    };
    let r_squared = model.and_then(|m| weights::r_squared(&changes, m.kappa()).ok());
    Ok(Analysis {
        n_features_tested,
        loo,
        changes,
        model,
        r_squared,
    })
}

/// Scores every deletion with `metric`.
pub fn score(analysis: &Analysis, metric: Metric, options: DetectOptions) -> Result<(InfluenceReport, Vec<String>)> {
    let loo = &analysis.loo;
    let mut warnings = Vec::new();
    let report = match metric {
        Metric::Adaptive => {
            let model = analysis.model.ok_or(PipelineError::NoRankChanges)?;
            influence::assess(&model, loo, options)?
        }
        Metric::Spearman | Metric::WeightedSpearman => {
            let method = if metric == Metric::Spearman {
                BaselineMethod::Spearman
            } else {
                BaselineMethod::Weighted
            };
            let scores = baselines::baseline_influence(method, loo)?;
            if scores.clamped_ranks > 0 {
                warnings.push(format!(
                    "{} leave-one-out ranks exceeded m = {} and were clamped in the weighted distance",
                    scores.clamped_ranks,
                    loo.original().len()
                ));
            }
            influence::detect_ip(scores.raw, loo.case_ids().to_vec(), options)?
        }
    };
    Ok((report, warnings))
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    report::write_text(&path, body).map_err(|source| PipelineError::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn changes_of(loo: &LooRankingSet, case: usize) -> Vec<(usize, usize)> {
    loo.case_ranks(case)
        .iter()
        .enumerate()
        .filter(|&(j, &r)| r != j + 1)
        .map(|(j, &r)| (j + 1, r))
        .collect()
}

fn fixed_curve(scheme: Option<FixedScheme>, m: usize) -> Result<Option<(String, Vec<f64>)>> {
    scheme
        .map(|s| Ok((s.to_string(), baselines::fixed_weights(s, m)?)))
        .transpose()
}

/// Summary returned by [`run_detect`].
#[derive(Debug, Clone)]
pub struct DetectOutcome {
    pub analysis: Analysis,
    pub report: InfluenceReport,
    pub files: Vec<PathBuf>,
}

/// Full detection run writing every artifact into `config.out_dir`.
pub fn run_detect(config: &RunConfig) -> Result<DetectOutcome> {
    config.validate()?;
    with_threads(config.threads, || {
        let x = prepare(config)?;
        let analysis = analyze(&x, config)?;
        if analysis.changes.is_empty() && config.metric == Metric::Adaptive {
            return Err(PipelineError::NoRankChanges);
        }
        let (report, warnings) = score(&analysis, config.metric, config.detect_options())?;
        let files = write_detect_artifacts(config, &analysis, &report, warnings)?;
        Ok(DetectOutcome {
            analysis,
            report,
            files,
        })
    })
}

fn write_detect_artifacts(
    config: &RunConfig,
    analysis: &Analysis,
    report: &InfluenceReport,
    warnings: Vec<String>,
) -> Result<Vec<PathBuf>> {
    let dir = &config.out_dir;
    ensure_dir(dir)?;
    let loo = &analysis.loo;
    let m = loo.original().len();
    let mut files = vec![
        write(dir, "original_ranking.csv", &report::original_ranking_csv(loo.original()))?,
        write(dir, "loo_ranks.csv", &report::loo_ranks_csv(loo))?,
    ];
    let fixed = fixed_curve(config.fixed_weights, m)?;
    let fixed_ref = fixed.as_ref().map(|(n, w)| (n.as_str(), w.as_slice()));
    let flagged_changes = changes_of(loo, report.top_case);
    if let Some(model) = &analysis.model {
        files.push(write(dir, "weights.csv", &report::weights_csv(model, fixed_ref))?);
        files.push(write(dir, "weighted_ranks.csv", &report::weighted_ranks_csv(model, loo))?);
        files.push(write(
            dir,
            "weight_curve.svg",
            &plot::weight_curve(model, &flagged_changes, fixed_ref),
        )?);
    }
    files.push(write(dir, "influence.csv", &report::influence_csv(report))?);

    // repeated (original, loo) pairs would draw the same dot many times
    let all_changes: Vec<(usize, usize)> = analysis
        .changes
        .pairs()
        .iter()
        .map(|p| (p.original, p.loo))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    files.push(write(
        dir,
        "rank_scatter.svg",
        &plot::rank_scatter(&all_changes, &flagged_changes, m),
    )?);
    files.push(write(
        dir,
        "influence.svg",
        &plot::influence_bars(
            &format!("Total rank change ({})", config.metric),
            &report.std_scores,
            Some(report.top_case),
        ),
    )?);

    let json = DetectReport {
        schema_version: report::REPORT_SCHEMA_VERSION,
        tool: ToolInfo::default(),
        metric: config.metric.to_string(),
        n_cases: loo.n_cases(),
        n_features_tested: analysis.n_features_tested,
        m,
        n_rank_changes: analysis.changes.len(),
        kappa: analysis.kappa_summary(config.kappa.is_some()),
        flagged: Some(FlaggedCase::from_report(report)),
        gap_threshold: config.gap_threshold,
        warnings,
        config: config.clone(),
    };
    files.push(write(dir, "report.json", &report::to_json(&json))?);
    Ok(files)
}

/// Per-metric result of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub metric: Metric,
    pub report: InfluenceReport,
    /// The ten features contributing most to the flagged case's score, as
    /// `(feature index, original rank, leave-one-out rank, contribution)`.
    pub top_changes: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub analysis: Analysis,
    /// Empty when no feature moved.
    pub results: Vec<MetricResult>,
    pub warnings: Vec<String>,
}

impl CompareOutcome {
    pub fn flagged(&self, metric: Metric) -> Option<usize> {
        self.results
            .iter()
            .find(|r| r.metric == metric)
            .map(|r| r.report.top_case)
    }
}

fn top_changes(analysis: &Analysis, metric: Metric, case: usize) -> Vec<(usize, usize, usize, f64)> {
    let loo = &analysis.loo;
    let original = loo.original().ranks();
    let ranks = loo.case_ranks(case);
    let terms = match metric {
        Metric::Adaptive => influence::rank_change_terms(
            analysis.model.as_ref().expect("adaptive scoring has a model"),
            &original,
            ranks,
        ),
        Metric::Spearman => BaselineMethod::Spearman.terms(&original, ranks, original.len()),
        Metric::WeightedSpearman => BaselineMethod::Weighted.terms(&original, ranks, original.len()),
    };
    let mut idx: Vec<usize> = (0..terms.len()).filter(|&j| terms[j] > 0.0).collect();
    idx.sort_by(|&a, &b| terms[b].total_cmp(&terms[a]).then(a.cmp(&b)));
    idx.into_iter()
        .take(10)
        .map(|j| (j, j + 1, ranks[j], terms[j]))
        .collect()
}

/// Scores the same leave-one-out rankings with all three metrics.
pub fn compare_analysis(analysis: Analysis, options: DetectOptions) -> Result<CompareOutcome> {
    if analysis.changes.is_empty() {
        return Ok(CompareOutcome {
            analysis,
            results: Vec::new(),
            warnings: vec!["no rank changes: every leave-one-out ranking equals the original".into()],
        });
    }
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    for metric in Metric::ALL {
        let (report, w) = score(&analysis, metric, options)?;
        warnings.extend(w);
        let top_changes = top_changes(&analysis, metric, report.top_case);
        results.push(MetricResult {
            metric,
            report,
            top_changes,
        });
    }
    Ok(CompareOutcome {
        analysis,
        results,
        warnings,
    })
}

#[derive(Debug, Serialize)]
struct CompareJson<'a> {
    schema_version: &'static str,
    tool: ToolInfo,
    status: &'static str,
    n_cases: usize,
    m: usize,
    n_rank_changes: usize,
    kappa: Option<KappaSummary>,
    flagged: Vec<(String, FlaggedCase)>,
    consistent: Option<bool>,
    warnings: &'a [String],
    config: &'a RunConfig,
}

/// Runs all three metrics on one dataset and writes the comparison tables
/// and figure.
pub fn run_compare(config: &RunConfig) -> Result<CompareOutcome> {
    config.validate()?;
    with_threads(config.threads, || {
        let x = prepare(config)?;
        let analysis = analyze(&x, config)?;
        let outcome = compare_analysis(analysis, config.detect_options())?;
        write_compare_artifacts(config, &outcome)?;
        Ok(outcome)
    })
}

pub fn write_compare_artifacts(config: &RunConfig, outcome: &CompareOutcome) -> Result<Vec<PathBuf>> {
    let dir = &config.out_dir;
    ensure_dir(dir)?;
    let loo = &outcome.analysis.loo;
    let mut files = vec![write(dir, "original_ranking.csv", &report::original_ranking_csv(loo.original()))?];

    if !outcome.results.is_empty() {
        let mut table = String::from("case_index,case_id");
        for r in &outcome.results {
            table.push(',');
            table.push_str(r.metric.as_str());
        }
        table.push('\n');
        for (i, id) in loo.case_ids().iter().enumerate() {
            table.push_str(&format!("{},{}", i + 1, id));
            for r in &outcome.results {
                table.push(',');
                table.push_str(&report::fmt6(r.report.std_scores[i]));
            }
            table.push('\n');
        }
        files.push(write(dir, "compare_influence.csv", &table)?);

        let mut top = String::from("metric,case_index,case_id,feature,original_rank,loo_rank,contribution\n");
        for r in &outcome.results {
            for &(j, orig, loo_rank, c) in &r.top_changes {
                top.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.metric,
                    r.report.top_case + 1,
                    r.report.top_case_id(),
                    loo.original().feature_ids()[j],
                    orig,
                    loo_rank,
                    report::fmt6(c)
                ));
            }
        }
        files.push(write(dir, "top_changes.csv", &top)?);

        let titles: Vec<String> = outcome.results.iter().map(|r| r.metric.to_string()).collect();
        let panels: Vec<(&str, &[f64], Option<usize>)> = outcome
            .results
            .iter()
            .zip(&titles)
            .map(|(r, t)| (t.as_str(), r.report.std_scores.as_slice(), Some(r.report.top_case)))
            .collect();
        files.push(write(dir, "compare.svg", &plot::bar_panels(&panels))?);
    }

    let flagged: Vec<(String, FlaggedCase)> = outcome
        .results
        .iter()
        .map(|r| (r.metric.to_string(), FlaggedCase::from_report(&r.report)))
        .collect();
    let consistent = (!flagged.is_empty()).then(|| flagged.iter().all(|(_, f)| f.index == flagged[0].1.index));
    let json = CompareJson {
        schema_version: report::REPORT_SCHEMA_VERSION,
        tool: ToolInfo::default(),
        status: if outcome.results.is_empty() {
            "no_rank_changes"
        } else {
            "ok"
        },
        n_cases: loo.n_cases(),
        m: loo.original().len(),
        n_rank_changes: outcome.analysis.changes.len(),
        kappa: outcome.analysis.kappa_summary(config.kappa.is_some()),
        flagged,
        consistent,
        warnings: &outcome.warnings,
        config,
    };
    files.push(write(dir, "compare.json", &report::to_json(&json))?);
    Ok(files)
}

/// Writes a synthetic matrix and label file.
pub fn run_generate(spec: &SyntheticSpec, matrix_path: &Path, label_path: &Path) -> Result<ExpressionMatrix> {
    let x = synthetic::generate(spec)?;
    for path in [matrix_path, label_path] {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
    }
    synthetic::write_matrix(&x, matrix_path, label_path)?;
    Ok(x)
}

/// `rank,weight[,scheme]` table for a given κ and list length.
/// Weight model, its CSV table, and the optional fixed-scheme column.
pub type WeightsTable = (WeightModel, String, Option<(String, Vec<f64>)>);

pub fn weights_table(kappa: f64, m: usize, fixed: Option<FixedScheme>) -> Result<WeightsTable> {
    let model = WeightModel::new(kappa, m)?;
    let fixed = fixed_curve(fixed, m)?;
    let csv = report::weights_csv(&model, fixed.as_ref().map(|(n, w)| (n.as_str(), w.as_slice())));
    Ok((model, csv, fixed))
}
