//! ranksentinel command-line interface.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ranksentinel_core::baselines::FixedScheme;
use ranksentinel_core::pipeline::{self, PipelineError};
use ranksentinel_core::plot;
use ranksentinel_core::report;
use ranksentinel_core::synthetic::SyntheticSpec;

use crate::config::RunArgs;

#[derive(Debug, Parser)]
#[command(name = "ranksentinel", version, about = "Find cases whose deletion reshuffles a feature ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every case with one metric and flag the most influential.
    Detect(RunArgs),
    /// Score every case with all three metrics side by side.
    Compare(RunArgs),
    /// Write a synthetic matrix with one planted influential case.
    Generate(GenerateArgs),
    /// Print the weight curve for a given κ and list length.
    WeightsTable(WeightsArgs),
}

#[derive(Debug, clap::Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 30)]
    n_cases: usize,
    #[arg(long, default_value_t = 30)]
    n_controls: usize,
    #[arg(long, default_value_t = 2000)]
    n_features: usize,
    #[arg(long, default_value_t = 20)]
    signal_features: usize,
    /// Case-vs-control shift of the signal features (noise sd units).
    #[arg(long, default_value_t = 1.0)]
    effect_size: f64,
    /// 1-based sample index of the contaminated case.
    #[arg(long, default_value_t = 1)]
    contaminated: usize,
    /// Extra shift of the contaminated case's signal features; 0 for none.
    #[arg(long, default_value_t = 8.0)]
    contamination: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    matrix: PathBuf,
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
}

#[derive(Debug, clap::Args)]
struct WeightsArgs {
    #[arg(long)]
    kappa: f64,
    #[arg(long, default_value_t = 200)]
    m: usize,
    /// Add a fixed weight scheme column (rr | roc).
    #[arg(long)]
    fixed_weights: Option<FixedScheme>,
    /// Write the table here instead of stdout.
    #[arg(long, short = 'o', value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also draw the curve.
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,
}

fn write_file(path: &Path, body: &str) -> Result<(), PipelineError> {
    report::write_text(path, body).map_err(|source| PipelineError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Detect(args) => {
            let config = args.resolve()?;
            let outcome = pipeline::run_detect(&config)?;
            let r = &outcome.report;
            let kappa = outcome.analysis.model.map(|m| m.kappa()).unwrap_or(f64::NAN);
            println!(
                "{} (index {}): standardized score {:.3}, gap {:.3}{}; kappa = {:.4}; {} files in {}",
                r.top_case_id(),
                r.top_case + 1,
                r.std_scores[r.top_case],
                r.gap,
                if r.candidate {
                    " -> candidate influential point"
                } else {
                    " (below threshold)"
                },
                kappa,
                outcome.files.len(),
                config.out_dir.display()
            );
        }
        Command::Compare(args) => {
            let config = args.resolve()?;
            let outcome = pipeline::run_compare(&config)?;
            if outcome.results.is_empty() {
                println!("no rank changes: no case alters the top-{} list", config.top_m);
            }
            for r in &outcome.results {
                println!(
                    "{:<10} {} (index {}), gap {:.3}",
                    r.metric.as_str(),
                    r.report.top_case_id(),
                    r.report.top_case + 1,
                    r.report.gap
                );
            }
        }
        Command::Generate(a) => {
            if a.contaminated == 0 {
                return Err(PipelineError::Config("--contaminated is 1-based".into()));
            }
            let spec = SyntheticSpec {
                n_cases: a.n_cases,
                n_controls: a.n_controls,
                n_features: a.n_features,
                signal_features: a.signal_features,
                effect_size: a.effect_size,
                contaminated: a.contaminated - 1,
                contamination: a.contamination,
                seed: a.seed,
            };
            pipeline::run_generate(&spec, &a.matrix, &a.labels)?;
        }
        Command::WeightsTable(a) => {
            let (model, csv, fixed) = pipeline::weights_table(a.kappa, a.m, a.fixed_weights)?;
            match &a.out {
                Some(path) => write_file(path, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(path) = &a.svg {
                let fixed = fixed.as_ref().map(|(n, w)| (n.as_str(), w.as_slice()));
                write_file(path, &plot::weight_curve(&model, &[], fixed))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ranksentinel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
