//! Tabular and JSON output.
//!
//! Tables print numbers with 6 significant digits; `report.json` keeps full
//! double precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::influence::InfluenceReport;
use crate::ranker::{LooRankingSet, Ranking};
use crate::weights::WeightModel;

/// Version of the `report.json` layout; bump on incompatible changes.
pub const REPORT_SCHEMA_VERSION: &str = "1.0.0";
pub const TOOL_NAME: &str = "ranksentinel";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// JSON schema shipped with the crate.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

/// Formats like C's `%.6g`.
pub fn fmt6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Quotes a CSV field when needed.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(path: &Path, body: &str) -> std::io::Result<()> {
    fs::write(path, body)
}

/// `feature,rank,t,p`
pub fn original_ranking_csv(ranking: &Ranking) -> String {
    let mut out = String::from("feature,rank,t,p\n");
    for (k, (id, test)) in ranking.feature_ids().iter().zip(ranking.tests()).enumerate() {
        let _ = writeln!(out, "{},{},{},{}", field(id), k + 1, fmt6(test.t), fmt6(test.p));
    }
    out
}

/// Feature × deleted-case rank matrix.
pub fn loo_ranks_csv(loo: &LooRankingSet) -> String {
    let mut out = String::from("feature,original");
    for id in loo.case_ids() {
        out.push(',');
        out.push_str(&field(id));
    }
    out.push('\n');
    for (j, id) in loo.original().feature_ids().iter().enumerate() {
        let _ = write!(out, "{},{}", field(id), j + 1);
        for ranks in loo.per_case() {
            let _ = write!(out, ",{}", ranks[j]);
        }
        out.push('\n');
    }
    out
}

/// `rank,weight` for ranks `1..=m`.
pub fn weights_csv(model: &WeightModel, fixed: Option<(&str, &[f64])>) -> String {
    let mut out = String::from("rank,weight");
    if let Some((name, _)) = fixed {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (k, w) in model.curve().into_iter().enumerate() {
        let _ = write!(out, "{},{}", k + 1, fmt6(w));
        if let Some((_, values)) = fixed {
            let _ = write!(out, ",{}", fmt6(values[k]));
        }
        out.push('\n');
    }
    out
}

/// Weighted original and leave-one-out ranks per feature and case.
pub fn weighted_ranks_csv(model: &WeightModel, loo: &LooRankingSet) -> String {
    let mut out = String::from("feature,original");
    for id in loo.case_ids() {
        out.push(',');
        out.push_str(&field(id));
    }
    out.push('\n');
    for (j, id) in loo.original().feature_ids().iter().enumerate() {
        let _ = write!(out, "{},{}", field(id), fmt6(model.weight(j + 1)));
        for ranks in loo.per_case() {
            let _ = write!(out, ",{}", fmt6(model.weight(ranks[j])));
        }
        out.push('\n');
    }
    out
}

/// `case_index,case_id,raw,standardized,top`
pub fn influence_csv(report: &InfluenceReport) -> String {
    let mut out = String::from("case_index,case_id,raw,standardized,top\n");
    for (i, id) in report.case_ids.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            field(id),
            fmt6(report.raw_scores[i]),
            fmt6(report.std_scores[i]),
            u8::from(i == report.top_case)
        );
    }
    out
}

/// The flagged case as written to JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedCase {
    /// 1-based position among the input samples.
    pub index: usize,
    pub case_id: String,
    pub raw_score: f64,
    pub std_score: f64,
    pub gap: f64,
    /// Always "candidate": flags are indications, not conclusions.
    pub status: &'static str,
    pub exceeds_threshold: bool,
    pub possible_multiple: bool,
}

impl FlaggedCase {
    pub fn from_report(report: &InfluenceReport) -> Self {
        Self {
            index: report.top_case + 1,
            case_id: report.top_case_id().to_string(),
            raw_score: report.raw_scores[report.top_case],
            std_score: report.std_scores[report.top_case],
            gap: report.gap,
            status: "candidate",
            exceeds_threshold: report.candidate,
            possible_multiple: report.possible_multiple,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaSummary {
    pub value: f64,
    /// Rounded to 3 decimals for display.
    pub rounded: f64,
    /// `fitted` or `override`.
    pub source: &'static str,
    pub r_squared: Option<f64>,
}

impl KappaSummary {
    pub fn new(value: f64, source: &'static str, r_squared: Option<f64>) -> Self {
        Self {
            value,
            rounded: (value * 1000.0).round() / 1000.0,
            source,
            r_squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self {
            name: TOOL_NAME,
            version: TOOL_VERSION,
        }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectReport<C: Serialize> {
    pub schema_version: &'static str,
    pub tool: ToolInfo,
    pub metric: String,
    pub n_cases: usize,
    pub n_features_tested: usize,
    pub m: usize,
    pub n_rank_changes: usize,
    pub kappa: Option<KappaSummary>,
    pub flagged: Option<FlaggedCase>,
    pub gap_threshold: f64,
    pub warnings: Vec<String>,
    pub config: C,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}
