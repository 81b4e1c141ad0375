//! Loading, validation and preprocessing of expression matrices.
//!
//! Matrices are stored features × samples, the orientation used on disk.
//! Every transformation returns a new matrix; inputs are never mutated.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited file {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("duplicate feature id `{0}`")]
    DuplicateFeature(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("non-numeric cell `{value}` at feature `{feature}`, sample `{sample}`")]
    NonNumeric {
        feature: String,
        sample: String,
        value: String,
    },
    #[error("invalid value {value} at feature `{feature}`, sample `{sample}` (must be finite and >= 0)")]
    InvalidValue {
        feature: String,
        sample: String,
        value: f64,
    },
    #[error("row {line} has {found} fields, expected {expected}")]
    RaggedRow {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("matrix has no features or no samples")]
    EmptyMatrix,
    #[error("sample `{0}` has no label")]
    MissingLabel(String),
    #[error("labelled sample `{0}` is not present in the matrix")]
    UnknownSample(String),
    #[error("sample `{sample}` labelled twice")]
    DuplicateLabel { sample: String },
    #[error("unrecognised label `{0}` (expected `case` or `control`)")]
    UnknownLabel(String),
    #[error("group `{0}` has no samples")]
    EmptyGroup(Group),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("every feature was removed by filtering")]
    AllFeaturesRemoved,
    #[error("sample `{0}` has a zero column sum and cannot be CPM-normalized")]
    ZeroColumnSum(String),
    #[error("balancing needs {needed} cases but only {available} are available")]
    InsufficientCases { needed: usize, available: usize },
    #[error("balancing ratio must be a positive integer")]
    InvalidRatio,
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Binary group tag of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Case,
    Control,
}

impl Group {
    pub fn parse(s: &str) -> Option<Group> {
        match s.trim().to_ascii_lowercase().as_str() {
            "case" => Some(Group::Case),
            "control" => Some(Group::Control),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Case => "case",
            Group::Control => "control",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A validated features × samples matrix with one group label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    feature_ids: Vec<String>,
    sample_ids: Vec<String>,
    values: Array2<f64>,
    labels: Vec<Group>,
}

impl ExpressionMatrix {
    pub fn new(
        feature_ids: Vec<String>,
        sample_ids: Vec<String>,
        values: Array2<f64>,
        labels: Vec<Group>,
    ) -> Result<Self> {
        if feature_ids.is_empty() || sample_ids.is_empty() {
            return Err(IngestError::EmptyMatrix);
        }
        if values.dim() != (feature_ids.len(), sample_ids.len()) {
            return Err(IngestError::Shape(format!(
                "values are {:?} but there are {} features and {} samples",
                values.dim(),
                feature_ids.len(),
                sample_ids.len()
            )));
        }
        if labels.len() != sample_ids.len() {
            return Err(IngestError::Shape(format!(
                "{} labels for {} samples",
                labels.len(),
                sample_ids.len()
            )));
        }
        if let Some(dup) = first_duplicate(&feature_ids) {
            return Err(IngestError::DuplicateFeature(dup.to_string()));
        }
        if let Some(dup) = first_duplicate(&sample_ids) {
            return Err(IngestError::DuplicateSample(dup.to_string()));
        }
        for ((j, s), &v) in values.indexed_iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(IngestError::InvalidValue {
                    feature: feature_ids[j].clone(),
                    sample: sample_ids[s].clone(),
                    value: v,
                });
            }
        }
        for group in [Group::Case, Group::Control] {
            if !labels.contains(&group) {
                return Err(IngestError::EmptyGroup(group));
            }
        }
        Ok(Self {
            feature_ids,
            sample_ids,
            values,
            labels,
        })
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[Group] {
        &self.labels
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn group_size(&self, group: Group) -> usize {
        self.labels.iter().filter(|&&g| g == group).count()
    }

    /// Keeps the listed feature rows, in the given order.
    pub fn select_features(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(IngestError::AllFeaturesRemoved);
        }
        let feature_ids = rows.iter().map(|&r| self.feature_ids[r].clone()).collect();
        let values = self.values.select(Axis(0), rows);
        Self::new(feature_ids, self.sample_ids.clone(), values, self.labels.clone())
    }

    /// Keeps the listed sample columns, in the given order.
    pub fn select_samples(&self, cols: &[usize]) -> Result<Self> {
        let sample_ids = cols.iter().map(|&c| self.sample_ids[c].clone()).collect();
        let labels = cols.iter().map(|&c| self.labels[c]).collect();
        let values = self.values.select(Axis(1), cols);
        Self::new(self.feature_ids.clone(), sample_ids, values, labels)
    }
}

fn first_duplicate(ids: &[String]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.iter().find(|id| !seen.insert(id.as_str())).map(String::as_str)
}

/// Picks tab when the first line contains one, comma otherwise.
pub fn detect_delimiter(path: &Path) -> Result<u8> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(if first.contains('\t') { b'\t' } else { b',' })
}

fn read_records(path: &Path, delimiter: Option<u8>) -> Result<Vec<Vec<String>>> {
    let delimiter = match delimiter {
        Some(d) => d,
        None => detect_delimiter(path)?,
    };
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }
    Ok(rows)
}

/// Reads a matrix file and a label file into a validated [`ExpressionMatrix`].
///
/// The matrix header lists sample ids (an optional leading corner cell is
/// allowed); each following row starts with a feature id.
pub fn load_matrix(
    path: &Path,
    label_path: &Path,
    delimiter: Option<u8>,
) -> Result<ExpressionMatrix> {
    let rows = read_records(path, delimiter)?;
    let (header, body) = rows.split_first().ok_or(IngestError::EmptyMatrix)?;
    let width = body.first().map(Vec::len).ok_or(IngestError::EmptyMatrix)?;
    let sample_ids: Vec<String> = if header.len() + 1 == width {
        header.clone()
    } else if header.len() == width {
        header[1..].to_vec()
    } else {
        return Err(IngestError::RaggedRow {
            line: 1,
            found: header.len(),
            expected: width,
        });
    };
    let n = sample_ids.len();
    let mut feature_ids = Vec::with_capacity(body.len());
    let mut flat = Vec::with_capacity(body.len() * n);
    for (k, row) in body.iter().enumerate() {
        if row.len() != n + 1 {
            return Err(IngestError::RaggedRow {
                line: k + 2,
                found: row.len(),
                expected: n + 1,
            });
        }
        for (s, cell) in row[1..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| IngestError::NonNumeric {
                feature: row[0].clone(),
                sample: sample_ids[s].clone(),
                value: cell.clone(),
            })?;
            flat.push(v);
        }
        feature_ids.push(row[0].clone());
    }
    let values = Array2::from_shape_vec((feature_ids.len(), n), flat)
        .map_err(|e| IngestError::Shape(e.to_string()))?;
    let labels = load_labels(label_path, delimiter, &sample_ids)?;
    ExpressionMatrix::new(feature_ids, sample_ids, values, labels)
}

/// Reads `sample_id,label` pairs and aligns them to `sample_ids`.
pub fn load_labels(path: &Path, delimiter: Option<u8>, sample_ids: &[String]) -> Result<Vec<Group>> {
    let rows = read_records(path, delimiter)?;
    let mut skip = 0;
    if let Some(first) = rows.first() {
        if first.len() >= 2 && Group::parse(&first[1]).is_none() {
            skip = 1;
        }
    }
    let mut by_sample: HashMap<&str, Group> = HashMap::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate().skip(skip) {
        if row.len() != 2 {
            return Err(IngestError::RaggedRow {
                line: k + 1,
                found: row.len(),
                expected: 2,
            });
        }
        let group = Group::parse(&row[1]).ok_or_else(|| IngestError::UnknownLabel(row[1].clone()))?;
        if by_sample.insert(row[0].as_str(), group).is_some() {
            return Err(IngestError::DuplicateLabel {
                sample: row[0].clone(),
            });
        }
    }
    let known: HashSet<&str> = sample_ids.iter().map(String::as_str).collect();
    if let Some(extra) = rows.iter().skip(skip).find(|r| !known.contains(r[0].as_str())) {
        return Err(IngestError::UnknownSample(extra[0].clone()));
    }
    sample_ids
        .iter()
        .map(|s| {
            by_sample
                .get(s.as_str())
                .copied()
                .ok_or_else(|| IngestError::MissingLabel(s.clone()))
        })
        .collect()
}

/// Reads one identifier per line; blank lines and `#` comments are ignored.
pub fn load_id_list(path: &Path) -> Result<HashSet<String>> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut ids = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            ids.insert(id.to_string());
        }
    }
    Ok(ids)
}

/// Drops every feature whose id appears in `excluded`.
pub fn exclude_features(x: &ExpressionMatrix, excluded: &HashSet<String>) -> Result<ExpressionMatrix> {
    let keep: Vec<usize> = (0..x.n_features())
        .filter(|&j| !excluded.contains(&x.feature_ids[j]))
        .collect();
    x.select_features(&keep)
}

/// Removes features that are exactly zero in more than half of the samples.
pub fn filter_low_expressed(x: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    let half = x.n_samples() as f64 / 2.0;
    let keep: Vec<usize> = x
        .values
        .outer_iter()
        .enumerate()
        .filter(|(_, row)| (row.iter().filter(|&&v| v == 0.0).count() as f64) <= half)
        .map(|(j, _)| j)
        .collect();
    x.select_features(&keep)
}

/// Scales each sample to counts per million.
pub fn cpm_normalize(x: &ExpressionMatrix) -> Result<ExpressionMatrix> {
    let mut values = x.values.clone();
    for (s, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
        let total: f64 = col.sum();
        if total <= 0.0 {
            return Err(IngestError::ZeroColumnSum(x.sample_ids[s].clone()));
        }
        let scale = 1e6 / total;
        col.mapv_inplace(|v| v * scale);
    }
    ExpressionMatrix::new(
        x.feature_ids.clone(),
        x.sample_ids.clone(),
        values,
        x.labels.clone(),
    )
}

/// Keeps every control and a seeded uniform subsample of `ratio × controls`
/// cases. Retained samples keep their original column order.
pub fn balance_groups(x: &ExpressionMatrix, ratio: usize, seed: u64) -> Result<ExpressionMatrix> {
    if ratio == 0 {
        return Err(IngestError::InvalidRatio);
    }
    let cases: Vec<usize> = (0..x.n_samples())
        .filter(|&s| x.labels[s] == Group::Case)
        .collect();
    let needed = ratio * x.group_size(Group::Control);
    if cases.len() < needed {
        return Err(IngestError::InsufficientCases {
            needed,
            available: cases.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, cases.len(), needed)
        .into_iter()
        .map(|k| cases[k])
        .collect();
    chosen.sort_unstable();
    let cols: Vec<usize> = (0..x.n_samples())
        .filter(|&s| x.labels[s] == Group::Control || chosen.binary_search(&s).is_ok())
        .collect();
    x.select_samples(&cols)
}
