//! Tabular ingestion and construction of the weakly-supervised training world.
//!
//! A labeled training split is turned into a tiny labeled anomaly set `A` and a
//! large unlabeled set `U` that holds every normal training instance plus a
//! controlled number of injected anomalies. The held-out test set never enters
//! [`WeakSupervisionSplit`], so nothing downstream of training can read its labels.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::ndcore::{Matrix, RunRng, seeded_rng};

/// Label value for anomalies; normals are 0.
pub const ANOMALY: u8 = 1;
pub const NORMAL: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub feature_names: Option<Vec<String>>,
    /// Optional per-row anomaly type, used to separate known from unknown anomaly types.
    pub anomaly_types: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<u8>) -> Result<Self> {
        let ds = LabeledDataset {
            features,
            labels,
            feature_names: None,
            anomaly_types: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                self.labels.len(),
                self.features.rows()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::Schema(format!("label {bad} is not binary")));
        }
        if !self.features.is_finite() {
            return Err(Error::Schema("non-finite feature value".into()));
        }
        if let Some(names) = &self.feature_names {
            if names.len() != self.features.cols() {
                return Err(Error::Shape(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    self.features.cols()
                )));
            }
        }
        if let Some(types) = &self.anomaly_types {
            if types.len() != self.labels.len() {
                return Err(Error::Shape("anomaly type column length mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_anomalies(&self) -> usize {
        self.labels.iter().filter(|&&l| l == ANOMALY).count()
    }

    pub fn anomaly_fraction(&self) -> f64 {
        self.n_anomalies() as f64 / self.len() as f64
    }

    /// Rows in the given order, carrying names and types along.
    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            anomaly_types: self
                .anomaly_types
                .as_ref()
                .map(|t| rows.iter().map(|&i| t[i].clone()).collect()),
        }
    }

    fn class_indices(&self, label: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Numeric strings select by position, anything else by header name.
    pub fn parse(s: &str) -> ColumnRef {
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }

    fn resolve(&self, headers: &csv::StringRecord) -> Result<usize> {
        match self {
            ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::Schema(format!(
                "column index {i} out of range for {} columns",
                headers.len()
            ))),
            ColumnRef::Name(name) => headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("no column named '{name}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub label_column: ColumnRef,
    /// When set, cells equal to this string are anomalies and every other value is normal.
    pub anomaly_value: Option<String>,
    /// Optional column holding the anomaly type; excluded from features.
    pub type_column: Option<ColumnRef>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: ColumnRef::Name("label".into()),
            anomaly_value: None,
            type_column: None,
        }
    }
}

/// Reads a comma-separated file with a header row. Row numbers in errors are 1-based data rows.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<LabeledDataset> {
    read_csv(path, opts, true).map(|(ds, _)| ds)
}

/// Like [`load_csv`], but a missing label column is allowed; labels are then `None`
/// and every remaining column is a feature.
pub fn load_csv_optional_labels(path: &Path, opts: &CsvOptions) -> Result<(Matrix, Option<Vec<u8>>)> {
    let (ds, labeled) = read_csv(path, opts, false)?;
    Ok((ds.features, labeled.then_some(ds.labels)))
}

fn read_csv(path: &Path, opts: &CsvOptions, require_label: bool) -> Result<(LabeledDataset, bool)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let label_idx = match opts.label_column.resolve(&headers) {
        Ok(i) => Some(i),
        Err(e) if require_label => return Err(e),
        Err(_) => None,
    };
    let type_idx = opts
        .type_column
        .as_ref()
        .map(|c| c.resolve(&headers))
        .transpose()?;
    if type_idx.is_some() && type_idx == label_idx {
        return Err(Error::Schema("type column and label column coincide".into()));
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| Some(c) != label_idx && Some(c) != type_idx)
        .collect();

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    let mut types = Vec::new();
    let mut n_rows = 0;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        n_rows = row;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[c].to_string(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            data.push(v);
        }
        if let Some(l) = label_idx {
            raw_labels.push(record.get(l).unwrap_or("").to_string());
        }
        if let Some(t) = type_idx {
            types.push(record.get(t).unwrap_or("").to_string());
        }
    }

    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    if distinct.len() > 2 {
        return Err(Error::Schema(format!(
            "label column has {} distinct values, expected at most 2",
            distinct.len()
        )));
    }
    let labels = match label_idx {
        Some(l) => raw_labels
            .iter()
            .enumerate()
            .map(|(i, raw)| parse_label(raw, opts.anomaly_value.as_deref(), i + 1, &headers[l]))
            .collect::<Result<Vec<u8>>>()?,
        None => vec![NORMAL; n_rows],
    };

    let n = labels.len();
    let ds = LabeledDataset {
        features: Matrix::from_vec(n, feature_cols.len(), data)?,
        labels,
        feature_names: Some(feature_cols.iter().map(|&c| headers[c].to_string()).collect()),
        anomaly_types: type_idx.map(|_| types),
    };
    ds.validate()?;
    Ok((ds, label_idx.is_some()))
}

fn parse_label(raw: &str, anomaly_value: Option<&str>, row: usize, column: &str) -> Result<u8> {
    if let Some(anomaly) = anomaly_value {
        return Ok(u8::from(raw == anomaly));
    }
    match raw.parse::<f64>() {
        Ok(0.0) => Ok(NORMAL),
        Ok(1.0) => Ok(ANOMALY),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("label '{raw}' is not 0/1 (use an anomaly value mapping)"),
        }),
    }
}

/// Writes features and labels as `name...,label` with a header row.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let names: Vec<String> = match &ds.feature_names {
        Some(n) => n.clone(),
        None => (1..=ds.dim()).map(|i| format!("f{i}")).collect(),
    };
    let mut header = names;
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(ds.labels[r].to_string());
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Row indices of a per-class stratified partition, each list in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn stratified_split_indices(
    ds: &LabeledDataset,
    train_fraction: f64,
    rng: &mut RunRng,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [NORMAL, ANOMALY] {
        let mut idx = ds.class_indices(label);
        if idx.len() < 2 {
            return Err(Error::DegenerateSplit(format!(
                "class {label} has {} instance(s); at least 2 are needed",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        let n_train = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Per-class stratified train/test partition; row order within each part follows the input.
pub fn stratified_split(
    ds: &LabeledDataset,
    train_fraction: f64,
    rng: &mut RunRng,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let idx = stratified_split_indices(ds, train_fraction, rng)?;
    Ok((ds.subset(&idx.train), ds.subset(&idx.test)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakSupervisionConfig {
    pub n_labeled: usize,
    /// Anomaly fraction of the unlabeled set `U`.
    pub contamination_rate: f64,
    /// Restrict `A` and the injected contamination to these anomaly types.
    pub known_types: Option<Vec<String>>,
}

impl Default for WeakSupervisionConfig {
    fn default() -> Self {
        WeakSupervisionConfig {
            n_labeled: 60,
            contamination_rate: 0.02,
            known_types: None,
        }
    }
}

/// Number of anomalies to inject so that `m / (n_normal + m)` is the contamination rate.
pub fn injected_anomaly_count(n_normal: usize, contamination_rate: f64) -> usize {
    (contamination_rate * n_normal as f64 / (1.0 - contamination_rate)).round() as usize
}

/// Training-time world state: a feature store with index lists for `A` and `U`.
///
/// Holds no test data. `unlabeled_truth` records which members of `U` are injected
/// anomalies; training and scoring never read it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakSupervisionSplit {
    pub features: Matrix,
    pub labeled_anomalies: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub unlabeled_truth: Vec<u8>,
    pub contamination_rate: f64,
    pub seed: u64,
}

impl WeakSupervisionSplit {
    /// Assembles a split from explicit pools. Pools must be disjoint and in range.
    pub fn from_parts(
        features: Matrix,
        labeled_anomalies: Vec<usize>,
        unlabeled: Vec<usize>,
        unlabeled_truth: Vec<u8>,
    ) -> Result<Self> {
        let n = features.rows();
        if labeled_anomalies.iter().chain(&unlabeled).any(|&i| i >= n) {
            return Err(Error::Shape("pool index outside the feature store".into()));
        }
        let a: HashSet<usize> = labeled_anomalies.iter().copied().collect();
        if unlabeled.iter().any(|i| a.contains(i)) {
            return Err(Error::Domain("labeled and unlabeled pools overlap".into()));
        }
        if unlabeled_truth.len() != unlabeled.len() {
            return Err(Error::Shape("unlabeled truth length mismatch".into()));
        }
        let contamination_rate = if unlabeled.is_empty() {
            0.0
        } else {
            unlabeled_truth.iter().filter(|&&l| l == ANOMALY).count() as f64
                / unlabeled.len() as f64
        };
        Ok(WeakSupervisionSplit {
            features,
            labeled_anomalies,
            unlabeled,
            unlabeled_truth,
            contamination_rate,
            seed: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows of `A ∪ U`, the data the model is fitted on.
    pub fn used_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .labeled_anomalies
            .iter()
            .chain(&self.unlabeled)
            .copied()
            .collect();
        rows.sort_unstable();
        rows
    }

    pub fn anomaly_row(&self, k: usize) -> &[f64] {
        self.features.row(self.labeled_anomalies[k])
    }

    pub fn unlabeled_row(&self, k: usize) -> &[f64] {
        self.features.row(self.unlabeled[k])
    }

    pub fn injected_count(&self) -> usize {
        self.unlabeled_truth.iter().filter(|&&l| l == ANOMALY).count()
    }
}

/// Splits the training part into `A` (labeled anomalies) and `U` (all normals plus injected anomalies).
///
/// Training anomalies that end up in neither pool are discarded.
pub fn build_weak_supervision(
    train: &LabeledDataset,
    cfg: &WeakSupervisionConfig,
    seed: u64,
) -> Result<WeakSupervisionSplit> {
    let eps = cfg.contamination_rate;
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::Argument(format!(
            "contamination rate must lie in [0, 0.5), got {eps}"
        )));
    }
    if cfg.n_labeled < 2 {
        return Err(Error::Argument(format!(
            "at least 2 labeled anomalies are needed, got {}",
            cfg.n_labeled
        )));
    }
    let normals = train.class_indices(NORMAL);
    if normals.len() < 2 {
        return Err(Error::Capacity {
            required: 2,
            available: normals.len(),
            context: "normal training instances".into(),
        });
    }
    let mut eligible = train.class_indices(ANOMALY);
    if let Some(known) = &cfg.known_types {
        let types = train.anomaly_types.as_ref().ok_or_else(|| {
            Error::Schema("known anomaly types given but the dataset has no type column".into())
        })?;
        eligible.retain(|&i| known.iter().any(|k| k == &types[i]));
    }
    let m = injected_anomaly_count(normals.len(), eps);
    let required = cfg.n_labeled + m;
    if eligible.len() < required {
        return Err(Error::Capacity {
            required,
            available: eligible.len(),
            context: format!(
                "{} labeled + {m} injected at contamination {eps}",
                cfg.n_labeled
            ),
        });
    }

    let mut rng = seeded_rng(seed);
    eligible.shuffle(&mut rng);
    let mut labeled_anomalies = eligible[..cfg.n_labeled].to_vec();
    labeled_anomalies.sort_unstable();
    let mut unlabeled: Vec<usize> = normals
        .iter()
        .chain(&eligible[cfg.n_labeled..required])
        .copied()
        .collect();
    unlabeled.sort_unstable();
    let unlabeled_truth = unlabeled.iter().map(|&i| train.labels[i]).collect();

    Ok(WeakSupervisionSplit {
        features: train.features.clone(),
        labeled_anomalies,
        unlabeled,
        unlabeled_truth,
        contamination_rate: eps,
        seed,
    })
}

/// Per-feature affine map fitted on training rows.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population std; columns below `MIN_STD` are only centered.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub const MIN_STD: f64 = 1e-12;

    pub fn fit(features: &Matrix) -> Self {
        let rows: Vec<usize> = (0..features.rows()).collect();
        Self::fit_rows(features, &rows)
    }

    pub fn fit_rows(features: &Matrix, rows: &[usize]) -> Self {
        let d = features.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Standardizer { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v -= m;
                if *s >= Self::MIN_STD {
                    *v /= s;
                }
            }
        }
        Ok(out)
    }
}

/// Fits on `train` and applies the same map to every matrix in `others`.
pub fn standardize(train: &Matrix, others: &[&Matrix]) -> Result<(Matrix, Vec<Matrix>, Standardizer)> {
    let st = Standardizer::fit(train);
    let t = st.transform(train)?;
    let rest = others.iter().map(|m| st.transform(m)).collect::<Result<Vec<_>>>()?;
    Ok((t, rest, st))
}
