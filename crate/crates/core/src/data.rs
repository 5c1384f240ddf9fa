//! Dataset ingestion, splitting and feature standardization.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XnetError};
use crate::expr::{ExprTree, NodeKind};

/// Row-major samples: `x[i]` holds the features of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub provenance: String,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let dim = x.first().map_or(0, |r| r.len());
        let names = (0..dim).map(|i| format!("x{}", i + 1)).collect();
        Dataset::with_names(x, y, names, "y".into(), "in-memory".into())
    }

    pub fn with_names(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        target_name: String,
        provenance: String,
    ) -> Result<Self> {
        if x.is_empty() {
            return Err(XnetError::InvalidInput("dataset has no samples".into()));
        }
        if x.len() != y.len() {
            return Err(XnetError::InvalidInput(format!(
                "{} feature rows but {} targets",
                x.len(),
                y.len()
            )));
        }
        let dim = x[0].len();
        if dim == 0 || x.iter().any(|r| r.len() != dim) {
            return Err(XnetError::InvalidInput("feature rows must share a nonzero width".into()));
        }
        if feature_names.len() != dim {
            return Err(XnetError::InvalidInput(format!(
                "{} feature names for {dim} features",
                feature_names.len()
            )));
        }
        if x.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
            return Err(XnetError::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            target_name,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    /// Subset by row indices, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_target(&self, y: Vec<f64>) -> Dataset {
        Dataset {
            y,
            ..self.clone()
        }
    }
}

/// A column addressed by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl From<&str> for ColumnRef {
    /// Purely numeric strings are positions, anything else a header name.
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }
}

impl ColumnRef {
    fn resolve(&self, headers: &[String]) -> Result<usize> {
        match self {
            ColumnRef::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| XnetError::MissingColumn(name.clone())),
            ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
            ColumnRef::Index(i) => Err(XnetError::MissingColumn(format!("#{i}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

/// Reads a headered CSV. Rows where any selected column fails to parse as
/// a finite number are dropped and counted.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &ColumnRef,
    features: Option<&[ColumnRef]>,
) -> Result<(Dataset, LoadStats)> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(XnetError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_col = target.resolve(&headers)?;
    let feature_cols: Vec<usize> = match features {
        Some(cols) => cols.iter().map(|c| c.resolve(&headers)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != target_col).collect(),
    };
    if feature_cols.is_empty() {
        return Err(XnetError::InvalidInput("no feature columns selected".into()));
    }

    let parse = |s: Option<&str>| s.and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| v.is_finite());
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut stats = LoadStats {
        rows_read: 0,
        rows_dropped: 0,
    };
    for record in reader.records() {
        let record = record?;
        stats.rows_read += 1;
        let target_value = parse(record.get(target_col));
        let row: Option<Vec<f64>> = feature_cols.iter().map(|&c| parse(record.get(c))).collect();
        match (row, target_value) {
            (Some(row), Some(t)) => {
                x.push(row);
                y.push(t);
            }
            _ => stats.rows_dropped += 1,
        }
    }
    if x.is_empty() {
        return Err(XnetError::NoUsableRows(path.display().to_string()));
    }
    let dataset = Dataset::with_names(
        x,
        y,
        feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        headers[target_col].clone(),
        path.display().to_string(),
    )?;
    Ok((dataset, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Chronological,
}

/// Splits off `round(fraction * N)` rows for training.
pub fn split(data: &Dataset, fraction: f64, mode: SplitMode, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(XnetError::Config(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(XnetError::EmptySplit { fraction, rows: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if mode == SplitMode::Random {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok((data.select(&order[..n_train]), data.select(&order[n_train..])))
}

/// Per-feature affine transform fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// False for zero-variance features, which pass through unscaled.
    pub scaled: Vec<bool>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(XnetError::InvalidInput("cannot standardize an empty dataset".into()));
        }
        let n = train.len() as f64;
        let d = train.dim();
        let mut means = vec![0.0; d];
        let mut stds = vec![1.0; d];
        let mut scaled = vec![true; d];
        for j in 0..d {
            let mean = train.x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = train.x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                means[j] = mean;
                stds[j] = var.sqrt();
            } else {
                scaled[j] = false;
            }
        }
        Ok(Standardizer { means, stds, scaled })
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| if self.scaled[j] { (v - self.means[j]) / self.stds[j] } else { *v })
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| if self.scaled[j] { v * self.stds[j] + self.means[j] } else { *v })
            .collect()
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        Dataset {
            x: data.x.iter().map(|r| self.transform_row(r)).collect(),
            ..data.clone()
        }
    }

    /// Rewrites leaf parameters so the tree reads raw-unit inputs.
    ///
    /// A leaf computes `w * z + b` with `z = (x - m) / s`, which equals
    /// `(w / s) * x + (b - w * m / s)`.
    pub fn unstandardize_tree(&self, tree: &ExprTree) -> ExprTree {
        let mut out = tree.clone();
        out.for_each_node_mut(|n| {
            if let NodeKind::Var(j) = n.kind {
                if self.scaled[j] {
                    let (m, s) = (self.means[j], self.stds[j]);
                    n.b -= n.w * m / s;
                    n.w /= s;
                }
            }
        });
        out
    }
}

/// Standardizes both partitions with statistics from `train` only.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Standardizer)> {
    let s = Standardizer::fit(train)?;
    Ok((s.transform(train), s.transform(test), s))
}
