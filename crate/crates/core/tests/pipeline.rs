use std::fs;
use std::path::Path;

use ranksentinel_core::baselines::Metric;
use ranksentinel_core::pipeline::{run_compare, run_detect, run_generate, PipelineError, RunConfig};
use ranksentinel_core::report::REPORT_SCHEMA;
use ranksentinel_core::synthetic::SyntheticSpec;

fn synthetic_inputs(dir: &Path, contaminated: usize, seed: u64) -> RunConfig {
    let spec = SyntheticSpec {
        n_features: 600,
        contaminated,
        seed,
        ..SyntheticSpec::default()
    };
    let (matrix, labels) = (dir.join("m.csv"), dir.join("l.csv"));
    run_generate(&spec, &matrix, &labels).unwrap();
    RunConfig {
        matrix,
        labels,
        top_m: 100,
        cpm: false,
        log_transform: false,
        out_dir: dir.join("out"),
        ..RunConfig::default()
    }
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn detect_writes_every_artifact_and_flags_the_planted_case() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_inputs(dir.path(), 41, 2);
    let outcome = run_detect(&config).unwrap();
    assert_eq!(outcome.report.top_case, 41);
    for name in [
        "original_ranking.csv",
        "loo_ranks.csv",
        "weights.csv",
        "weighted_ranks.csv",
        "influence.csv",
        "report.json",
        "rank_scatter.svg",
        "weight_curve.svg",
        "influence.svg",
    ] {
        assert!(config.out_dir.join(name).is_file(), "{name} missing");
    }

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(config.out_dir.join("report.json")).unwrap()).unwrap();
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["flagged"]["case_id"], "obs42");
    assert_eq!(report["flagged"]["index"], 42);
    assert_eq!(report["flagged"]["status"], "candidate");
    assert_eq!(report["config"]["top_m"], 100);
    assert!(report["config"].get("threads").is_none());
}

#[test]
fn schema_rejects_malformed_reports() {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    assert!(!validator.is_valid(&serde_json::json!({"schema_version": "1.0.0"})));
}

#[test]
fn tables_round_trip_at_six_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_inputs(dir.path(), 5, 4);
    let outcome = run_detect(&config).unwrap();
    let rows = read_csv(&config.out_dir.join("influence.csv"));
    assert_eq!(rows.len(), 60);
    for (i, row) in rows.iter().enumerate() {
        let raw: f64 = row[2].parse().unwrap();
        let std: f64 = row[3].parse().unwrap();
        let want_raw = outcome.report.raw_scores[i];
        let want_std = outcome.report.std_scores[i];
        assert!((raw - want_raw).abs() <= 5e-6 * want_raw.abs());
        assert!((std - want_std).abs() <= 5e-6 * want_std.abs());
        assert_eq!(row[4] == "1", i == 5);
    }
    let model = outcome.analysis.model.unwrap();
    for (k, row) in read_csv(&config.out_dir.join("weights.csv")).iter().enumerate() {
        let w: f64 = row[1].parse().unwrap();
        assert!((w - model.weight(k + 1)).abs() <= 5e-6 * w);
    }
    let loo = read_csv(&config.out_dir.join("loo_ranks.csv"));
    for (j, row) in loo.iter().enumerate() {
        assert_eq!(row[1], (j + 1).to_string());
        for (case, cell) in row[2..].iter().enumerate() {
            assert_eq!(cell.parse::<usize>().unwrap(), outcome.analysis.loo.case_ranks(case)[j]);
        }
    }
}

#[test]
fn kappa_override_gives_the_lusc_first_weight() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig {
        kappa: Some(0.010),
        top_m: 200,
        ..synthetic_inputs(dir.path(), 0, 1)
    };
    run_detect(&config).unwrap();
    let rows = read_csv(&config.out_dir.join("weights.csv"));
    let first: f64 = rows[0][1].parse().unwrap();
    assert_eq!(format!("{first:.4}"), "0.0115");
    let report = fs::read_to_string(config.out_dir.join("report.json")).unwrap();
    assert!(report.contains("\"source\": \"override\""));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let base = synthetic_inputs(dir.path(), 9, 6);
    let a = RunConfig {
        threads: Some(1),
        out_dir: dir.path().join("a"),
        ..base.clone()
    };
    let b = RunConfig {
        threads: Some(3),
        out_dir: dir.path().join("b"),
        ..base
    };
    run_detect(&a).unwrap();
    run_detect(&b).unwrap();
    for entry in fs::read_dir(&a.out_dir).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.out_dir.join(&name)).unwrap(),
            fs::read(b.out_dir.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn compare_agrees_on_a_dominant_case() {
    let dir = tempfile::tempdir().unwrap();
    let config = synthetic_inputs(dir.path(), 33, 12);
    let outcome = run_compare(&config).unwrap();
    for metric in Metric::ALL {
        assert_eq!(outcome.flagged(metric), Some(33), "{metric}");
    }
    let top = read_csv(&config.out_dir.join("top_changes.csv"));
    assert_eq!(top.len(), 30);
    let table = read_csv(&config.out_dir.join("compare_influence.csv"));
    assert_eq!(table.len(), 60);
    assert!(config.out_dir.join("compare.svg").is_file());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(config.out_dir.join("compare.json")).unwrap()).unwrap();
    assert_eq!(json["status"], "ok");
    assert_eq!(json["consistent"], true);
}

/// Two features so far apart that no deletion can reorder them.
fn frozen_inputs(dir: &Path) -> RunConfig {
    let (matrix, labels) = (dir.join("m.csv"), dir.join("l.csv"));
    let mut m = String::from("feature,a,b,c,d,e,f\n");
    m.push_str("up,100,101,102,1,2,3\n");
    m.push_str("flat,5,6,5.5,5.2,5.9,5.4\n");
    fs::write(&matrix, m).unwrap();
    fs::write(&labels, "a,case\nb,case\nc,case\nd,control\ne,control\nf,control\n").unwrap();
    RunConfig {
        matrix,
        labels,
        top_m: 2,
        cpm: false,
        log_transform: false,
        filter_low_expressed: false,
        out_dir: dir.join("out"),
        ..RunConfig::default()
    }
}

#[test]
fn no_rank_changes_is_a_clean_comparison_but_degenerate_detection() {
    let dir = tempfile::tempdir().unwrap();
    let config = frozen_inputs(dir.path());
    let outcome = run_compare(&config).unwrap();
    assert!(outcome.results.is_empty());
    let json = fs::read_to_string(config.out_dir.join("compare.json")).unwrap();
    assert!(json.contains("\"status\": \"no_rank_changes\""));

    let err = run_detect(&config).unwrap_err();
    assert!(matches!(err, PipelineError::NoRankChanges));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn invalid_settings_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let base = frozen_inputs(dir.path());
    let cases = [
        RunConfig { top_m: 0, ..base.clone() },
        RunConfig { kappa: Some(-1.0), ..base.clone() },
        RunConfig { kappa_min: 2.0, kappa_max: 1.0, ..base.clone() },
        RunConfig { balance_ratio: Some(2), seed: None, ..base.clone() },
        RunConfig { top_m: 3, ..base.clone() },
        RunConfig { matrix: dir.path().join("missing.csv"), ..base },
    ];
    for config in cases {
        let err = run_detect(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
}
