use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ranksentinel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ranksentinel"))
        .args(args)
        .current_dir(dir)
        .env_remove("RANKSENTINEL_THREADS")
        .output()
        .unwrap()
}

fn generate(dir: &Path, seed: &str) {
    let out = ranksentinel(
        dir,
        &["generate", "--seed", seed, "--n-features", "400", "--contaminated", "3", "--matrix", "m.csv", "--labels", "l.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "5");
    let first = fs::read(dir.path().join("m.csv")).unwrap();
    let labels = fs::read(dir.path().join("l.csv")).unwrap();
    generate(dir.path(), "5");
    assert_eq!(first, fs::read(dir.path().join("m.csv")).unwrap());
    assert_eq!(labels, fs::read(dir.path().join("l.csv")).unwrap());
    generate(dir.path(), "6");
    assert_ne!(first, fs::read(dir.path().join("m.csv")).unwrap());
}

#[test]
fn detect_reports_the_planted_case() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "1");
    let out = ranksentinel(dir.path(), &["detect", "--matrix", "m.csv", "--labels", "l.csv", "--top-m", "100", "-o", "out"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("obs3 (index 3)"), "{stdout}");
    let report = fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    assert!(report.contains("\"case_id\": \"obs3\""));
}

#[test]
fn weights_table_prints_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = ranksentinel(dir.path(), &["weights-table", "--kappa", "0.010", "--m", "200", "--fixed-weights", "rr", "--svg", "w.svg"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 201);
    assert_eq!(lines[0], "rank,weight,rr");
    assert!(lines[1].starts_with("1,0.0115"));
    assert!(lines[200].starts_with("200,"));
    assert!(fs::read_to_string(dir.path().join("w.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "2");
    fs::write(
        dir.path().join("run.toml"),
        "matrix = \"m.csv\"\nlabels = \"l.csv\"\ntop_m = 50\nmetric = \"spearman\"\nout_dir = \"from_file\"\n",
    )
    .unwrap();
    let out = ranksentinel(dir.path(), &["detect", "--config", "run.toml", "--top-m", "80"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("from_file/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["top_m"], 80);
    assert_eq!(report["metric"], "spearman");
    assert_eq!(report["m"], 80);
}

#[test]
fn thread_count_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "3");
    let out = Command::new(env!("CARGO_BIN_EXE_ranksentinel"))
        .args(["detect", "--matrix", "m.csv", "--labels", "l.csv", "-o", "env"])
        .current_dir(dir.path())
        .env("RANKSENTINEL_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let flag = ranksentinel(dir.path(), &["detect", "--matrix", "m.csv", "--labels", "l.csv", "--threads", "1", "-o", "flag"]);
    assert!(flag.status.success());
    assert_eq!(
        fs::read(dir.path().join("env/influence.csv")).unwrap(),
        fs::read(dir.path().join("flag/influence.csv")).unwrap()
    );
    let bad = Command::new(env!("CARGO_BIN_EXE_ranksentinel"))
        .args(["detect", "--matrix", "m.csv", "--labels", "l.csv"])
        .current_dir(dir.path())
        .env("RANKSENTINEL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("m.csv"), "feature,a,b,c,d,e,f\nup,100,101,102,1,2,3\nflat,5,6,5.5,5.2,5.9,5.4\n").unwrap();
    fs::write(d.join("l.csv"), "a,case\nb,case\nc,case\nd,control\ne,control\nf,control\n").unwrap();
    let base = ["--matrix", "m.csv", "--labels", "l.csv", "--top-m", "2", "--no-cpm", "--no-log", "--no-filter"];

    let detect = ranksentinel(d, &[&["detect"][..], &base[..]].concat());
    assert_eq!(detect.status.code(), Some(3));
    let stderr = String::from_utf8(detect.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");

    let compare = ranksentinel(d, &[&["compare"][..], &base[..], &["-o", "cmp"][..]].concat());
    assert_eq!(compare.status.code(), Some(0));
    assert!(String::from_utf8(compare.stdout).unwrap().contains("no rank changes"));

    let missing = ranksentinel(d, &["detect", "--matrix", "nope.csv", "--labels", "l.csv"]);
    assert_eq!(missing.status.code(), Some(2));

    fs::write(d.join("bad.csv"), "feature,a,b,c,d,e,f\nx,1,2,three,4,5,6\n").unwrap();
    let bad = ranksentinel(d, &["detect", "--matrix", "bad.csv", "--labels", "l.csv"]);
    assert_eq!(bad.status.code(), Some(2));

    let unknown = ranksentinel(d, &["detect", "--matrix", "m.csv", "--labels", "l.csv", "--metric", "kendall"]);
    assert_eq!(unknown.status.code(), Some(2));
}
