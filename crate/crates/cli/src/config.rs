//! Flag / config-file merging.

use std::path::{Path, PathBuf};

use clap::Args;
use ranksentinel_core::baselines::{FixedScheme, Metric};
use ranksentinel_core::pipeline::{PipelineError, RunConfig};
use ranksentinel_core::ranker::TTestKind;
use serde::Deserialize;

/// Keys accepted in a `--config` TOML file. Every key is optional; flags
/// given on the command line win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub matrix: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub exclude: Option<PathBuf>,
    pub delimiter: Option<char>,
    pub top_m: Option<usize>,
    pub metric: Option<Metric>,
    pub test: Option<TTestKind>,
    pub log_transform: Option<bool>,
    pub cpm: Option<bool>,
    pub filter_low_expressed: Option<bool>,
    pub kappa: Option<f64>,
    pub kappa_min: Option<f64>,
    pub kappa_max: Option<f64>,
    pub kappa_tol: Option<f64>,
    pub balance_ratio: Option<usize>,
    pub seed: Option<u64>,
    pub gap_threshold: Option<f64>,
    pub centered: Option<bool>,
    pub fixed_weights: Option<FixedScheme>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with default settings; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Feature × sample matrix (CSV or TSV).
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
    /// Two-column sample,group file (group: case|control).
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// One feature id per line to drop before ranking.
    #[arg(long, value_name = "FILE")]
    pub exclude: Option<PathBuf>,
    /// Field delimiter; inferred from the header when omitted.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Length of the ranked list.
    #[arg(long)]
    pub top_m: Option<usize>,
    /// adaptive | spearman | wspearman
    #[arg(long)]
    pub metric: Option<Metric>,
    /// welch | pooled
    #[arg(long)]
    pub test: Option<TTestKind>,
    /// Test on raw values instead of log2(v+1).
    #[arg(long)]
    pub no_log: bool,
    /// Input is already normalized; skip counts-per-million scaling.
    #[arg(long)]
    pub no_cpm: bool,
    /// Keep features that are zero in more than half the samples.
    #[arg(long)]
    pub no_filter: bool,
    /// Use this κ instead of fitting it.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub kappa_min: Option<f64>,
    #[arg(long)]
    pub kappa_max: Option<f64>,
    #[arg(long)]
    pub kappa_tol: Option<f64>,
    /// Subsample the larger group to at most RATIO times the smaller one.
    #[arg(long, value_name = "RATIO")]
    pub balance_ratio: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gap (in sd units) between the two largest scores needed to flag.
    #[arg(long)]
    pub gap_threshold: Option<f64>,
    /// Center scores before dividing by their sd.
    #[arg(long)]
    pub centered: bool,
    /// Overlay a fixed weight scheme (rr | roc) on the weight-curve plot.
    #[arg(long)]
    pub fixed_weights: Option<FixedScheme>,
    /// Worker threads for the leave-one-out step.
    #[arg(long, env = "RANKSENTINEL_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, short = 'o', value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    /// flags > config file > defaults
    pub fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let d = RunConfig::default();
        let flag = |set: bool| set.then_some(false);
        let config = RunConfig {
            matrix: self
                .matrix
                .clone()
                .or(file.matrix)
                .ok_or_else(|| PipelineError::Config("--matrix is required".into()))?,
            labels: self
                .labels
                .clone()
                .or(file.labels)
                .ok_or_else(|| PipelineError::Config("--labels is required".into()))?,
            exclude: self.exclude.clone().or(file.exclude),
            delimiter: self.delimiter.or(file.delimiter),
            top_m: self.top_m.or(file.top_m).unwrap_or(d.top_m),
            metric: self.metric.or(file.metric).unwrap_or(d.metric),
            test: self.test.or(file.test).unwrap_or(d.test),
            log_transform: flag(self.no_log).or(file.log_transform).unwrap_or(d.log_transform),
            cpm: flag(self.no_cpm).or(file.cpm).unwrap_or(d.cpm),
            filter_low_expressed: flag(self.no_filter)
                .or(file.filter_low_expressed)
                .unwrap_or(d.filter_low_expressed),
            kappa: self.kappa.or(file.kappa),
            kappa_min: self.kappa_min.or(file.kappa_min).unwrap_or(d.kappa_min),
            kappa_max: self.kappa_max.or(file.kappa_max).unwrap_or(d.kappa_max),
            kappa_tol: self.kappa_tol.or(file.kappa_tol).unwrap_or(d.kappa_tol),
            balance_ratio: self.balance_ratio.or(file.balance_ratio),
            seed: self.seed.or(file.seed),
            gap_threshold: self.gap_threshold.or(file.gap_threshold).unwrap_or(d.gap_threshold),
            centered: self.centered || file.centered.unwrap_or(d.centered),
            fixed_weights: self.fixed_weights.or(file.fixed_weights),
            threads: self.threads.or(file.threads),
            out_dir: self.out.clone().or(file.out_dir).unwrap_or(d.out_dir),
        };
        config.validate()?;
        Ok(config)
    }
}
