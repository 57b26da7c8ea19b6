use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub group_column: String,
    /// Group values in index order. Empty means sorted distinct values.
    #[serde(default)]
    pub group_values: Vec<String>,
    pub label_column: String,
    /// Raw label values mapped to `Y = 1`; everything else maps to `Y = -1`.
    pub positive_labels: Vec<String>,
    #[serde(default)]
    pub numeric_columns: Vec<String>,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    /// Drop rows containing empty or `?` cells instead of failing.
    #[serde(default)]
    pub drop_missing: bool,
}

impl SchemaConfig {
    /// Column layout of the UCI Adult census extract.
    pub fn adult() -> Self {
        SchemaConfig {
            group_column: "sex".into(),
            group_values: vec!["Female".into(), "Male".into()],
            label_column: "income".into(),
            positive_labels: vec![">50K".into(), ">50K.".into()],
            numeric_columns: ["age", "education-num", "capital-gain", "capital-loss", "hours-per-week"]
                .map(String::from)
                .to_vec(),
            categorical_columns: ["workclass", "marital-status", "occupation", "relationship", "race"]
                .map(String::from)
                .to_vec(),
            drop_missing: false,
        }
    }
}

/// Cleaned tabular data: standardized numeric and one-hot categorical features,
/// labels in `{-1, 1}` and group indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
    pub groups: Vec<usize>,
    pub group_names: Vec<String>,
    pub content_hash: String,
}

impl LabeledDataset {
    /// Build directly from arrays (used by fixtures and tests).
    pub fn from_parts(
        features: Vec<Vec<f64>>,
        labels: Vec<i8>,
        groups: Vec<usize>,
        group_count: usize,
    ) -> Result<Self> {
        let width = features.first().map_or(0, Vec::len);
        let ds = LabeledDataset {
            feature_names: (0..width).map(|i| format!("x{i}")).collect(),
            features,
            labels,
            groups,
            group_names: (0..group_count).map(|g| format!("g{g}")).collect(),
            content_hash: String::new(),
        };
        ds.validate()?;
        let mut ds = ds;
        ds.content_hash = hex::encode(Sha256::digest(serde_json::to_vec(&(
            &ds.features,
            &ds.labels,
            &ds.groups,
        ))?));
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.group_names.len()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// Row counts per group: `[negatives, positives]`.
    pub fn cell_counts(&self) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; self.group_count()];
        for (&y, &g) in self.labels.iter().zip(&self.groups) {
            counts[g][usize::from(y == 1)] += 1;
        }
        counts
    }

    /// Empirical `Pr(Y=1 | G=g)` per group.
    pub fn base_rates(&self) -> Vec<f64> {
        self.cell_counts()
            .iter()
            .map(|[neg, pos]| *pos as f64 / (*neg + *pos) as f64)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.len() != n || self.groups.len() != n {
            return Err(Error::validation("dataset columns have inconsistent lengths"));
        }
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != self.width() {
                return Err(Error::Dimension {
                    expected: self.width(),
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("row {i} has non-finite features")));
            }
        }
        if let Some(y) = self.labels.iter().find(|y| **y != 1 && **y != -1) {
            return Err(Error::validation(format!("label {y} not in {{-1, 1}}")));
        }
        if let Some(g) = self.groups.iter().find(|g| **g >= self.group_count()) {
            return Err(Error::validation(format!("group index {g} out of range")));
        }
        for (g, [neg, pos]) in self.cell_counts().iter().enumerate() {
            if *neg == 0 || *pos == 0 {
                return Err(Error::validation(format!(
                    "group `{}` lacks rows for one label (neg {neg}, pos {pos})",
                    self.group_names[g]
                )));
            }
        }
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

/// Read an RFC-4180 CSV with a header row and clean it according to `schema`.
pub fn ingest_dataset(path: &Path, schema: &SchemaConfig) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let content_hash = hex::encode(Sha256::digest(&bytes));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingestion {
                row: 0,
                column: name.to_string(),
                message: "column missing from header".into(),
            })
    };
    let group_idx = column(&schema.group_column)?;
    let label_idx = column(&schema.label_column)?;
    let numeric_idx = schema
        .numeric_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let categorical_idx = schema
        .categorical_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let used: Vec<usize> = [group_idx, label_idx]
        .into_iter()
        .chain(numeric_idx.iter().copied())
        .chain(categorical_idx.iter().copied())
        .collect();

    let mut records = Vec::new();
    'rows: for (i, rec) in reader.records().enumerate() {
        // Header is row 1, so data starts at row 2.
        let row = i + 2;
        let rec = rec?;
        for &c in &used {
            let cell = rec.get(c).unwrap_or("");
            if is_missing(cell) {
                if schema.drop_missing {
                    continue 'rows;
                }
                return Err(Error::Ingestion {
                    row,
                    column: headers[c].clone(),
                    message: "empty cell".into(),
                });
            }
        }
        let mut numeric = Vec::with_capacity(numeric_idx.len());
        for &c in &numeric_idx {
            let cell = rec.get(c).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| Error::Ingestion {
                row,
                column: headers[c].clone(),
                message: format!("`{cell}` is not numeric"),
            })?;
            numeric.push(value);
        }
        let categorical: Vec<String> = categorical_idx
            .iter()
            .map(|&c| rec.get(c).unwrap_or("").to_string())
            .collect();
        let label = rec.get(label_idx).unwrap_or("");
        let y: i8 = if schema.positive_labels.iter().any(|p| p == label) {
            1
        } else {
            -1
        };
        records.push((row, numeric, categorical, y, rec.get(group_idx).unwrap_or("").to_string()));
    }
    if records.is_empty() {
        return Err(Error::Ingestion {
            row: 1,
            column: String::new(),
            message: "no data rows".into(),
        });
    }

    let group_names: Vec<String> = if schema.group_values.is_empty() {
        records
            .iter()
            .map(|r| r.4.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        schema.group_values.clone()
    };

    // Column statistics for standardization.
    let n = records.len() as f64;
    let mut means = vec![0.0; numeric_idx.len()];
    for r in &records {
        for (m, v) in means.iter_mut().zip(&r.1) {
            *m += v / n;
        }
    }
    let mut stds = vec![0.0; numeric_idx.len()];
    for r in &records {
        for ((s, v), m) in stds.iter_mut().zip(&r.1).zip(&means) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut stds {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let levels: Vec<Vec<String>> = (0..categorical_idx.len())
        .map(|j| {
            records
                .iter()
                .map(|r| r.2[j].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();

    let mut feature_names: Vec<String> = schema.numeric_columns.clone();
    for (j, col) in schema.categorical_columns.iter().enumerate() {
        feature_names.extend(levels[j].iter().map(|l| format!("{col}={l}")));
    }

    let mut features = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut groups = Vec::with_capacity(records.len());
    for (row, numeric, categorical, y, group) in records {
        let g = group_names
            .iter()
            .position(|name| *name == group)
            .ok_or_else(|| Error::Ingestion {
                row,
                column: schema.group_column.clone(),
                message: format!("unknown group value `{group}`"),
            })?;
        let mut x: Vec<f64> = numeric
            .iter()
            .zip(&means)
            .zip(&stds)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        for (j, value) in categorical.iter().enumerate() {
            x.extend(levels[j].iter().map(|l| f64::from(u8::from(l == value))));
        }
        features.push(x);
        labels.push(y);
        groups.push(g);
    }

    let ds = LabeledDataset {
        feature_names,
        features,
        labels,
        groups,
        group_names,
        content_hash,
    };
    ds.validate()?;
    Ok(ds)
}
