//! Dataset loading, category encoding, and per-category sufficient statistics.
//!
//! A [`Dataset`] holds an outcome `y`, a scalar endogenous regressor `d`, an
//! n x J covariate matrix `x`, and a categorical instrument `z` stored as
//! dense codes `0..G`. Codes are assigned in first-appearance order so that
//! re-encoding the same file is bit-for-bit reproducible.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable sample of (y, d, x, z). Safe to share read-only across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    d: Vec<f64>,
    /// Row-major n x J covariate matrix.
    x: Vec<f64>,
    n_covariates: usize,
    z: Vec<usize>,
    category_labels: Vec<String>,
}

impl Dataset {
    /// Validates and constructs a dataset.
    ///
    /// Requires equal column lengths (n >= 2), finite `y`/`d`/`x`, and that
    /// every code `0..G` appears at least once where `G = labels.len()`.
    pub fn new(
        y: Vec<f64>,
        d: Vec<f64>,
        x: Vec<f64>,
        n_covariates: usize,
        z: Vec<usize>,
        category_labels: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need n >= 2, got n = {n}")));
        }
        if d.len() != n || z.len() != n {
            return Err(Error::InvalidInput(format!(
                "column length mismatch: y = {}, d = {}, z = {}",
                n,
                d.len(),
                z.len()
            )));
        }
        if x.len() != n * n_covariates {
            return Err(Error::InvalidInput(format!(
                "covariate matrix has {} entries, expected {} ({} x {})",
                x.len(),
                n * n_covariates,
                n,
                n_covariates
            )));
        }
        for (name, col) in [("y", &y), ("d", &d), ("x", &x)] {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite value in {name}")));
            }
        }
        let g = category_labels.len();
        let mut seen = vec![false; g];
        for &code in &z {
            if code >= g {
                return Err(Error::InvalidInput(format!(
                    "category code {code} out of range (G = {g})"
                )));
            }
            seen[code] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "category code {missing} never appears"
            )));
        }
        Ok(Dataset {
            y,
            d,
            x,
            n_covariates,
            z,
            category_labels,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of categories G.
    pub fn n_categories(&self) -> usize {
        self.category_labels.len()
    }

    /// Number of covariate columns J.
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn category_labels(&self) -> &[String] {
        &self.category_labels
    }

    /// Covariate row for observation `i` (length J).
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_covariates..(i + 1) * self.n_covariates]
    }

    /// Per-category observation counts (all positive by construction).
    pub fn category_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_categories()];
        for &code in &self.z {
            counts[code] += 1;
        }
        counts
    }
}

/// Column-name map used by [`load_csv`].
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub y: String,
    pub d: String,
    pub z: String,
    pub x: Vec<String>,
}

/// Loads a CSV with a header row into a validated [`Dataset`].
///
/// The `z` column is read as an opaque string and factorized into dense codes
/// in first-appearance order; original labels are retained.
pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let y_idx = find(&schema.y)?;
    let d_idx = find(&schema.d)?;
    let z_idx = find(&schema.z)?;
    let x_idx: Vec<usize> = schema
        .x
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut code_of: HashMap<String, usize> = HashMap::new();

    let parse_cell = |record: &csv::StringRecord, idx: usize, col: &str, row: usize| -> Result<f64> {
        let raw = record.get(idx).unwrap_or("");
        raw.trim().parse::<f64>().map_err(|_| Error::Parse {
            row,
            column: col.to_string(),
            value: raw.to_string(),
        })
    };

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1; // 1-based data row
        y.push(parse_cell(&record, y_idx, &schema.y, row)?);
        d.push(parse_cell(&record, d_idx, &schema.d, row)?);
        for (j, &idx) in x_idx.iter().enumerate() {
            x.push(parse_cell(&record, idx, &schema.x[j], row)?);
        }
        let label = record.get(z_idx).unwrap_or("").trim().to_string();
        let code = *code_of.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            labels.len() - 1
        });
        z.push(code);
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    Dataset::new(y, d, x, schema.x.len(), z, labels)
}

/// Per-category counts and residual means, the sufficient statistics for the
/// K-conditional-means problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryStats {
    /// Observation count per category (strictly positive).
    pub counts: Vec<usize>,
    /// Mean residual per category.
    pub means: Vec<f64>,
    /// Permutation of category codes sorting `means` ascending, ties broken
    /// by category code ascending.
    pub order: Vec<usize>,
}

impl CategoryStats {
    pub fn n_categories(&self) -> usize {
        self.counts.len()
    }
}

/// Computes counts, per-category means, and the sorted-mean order for a
/// residual vector grouped by category code.
pub fn category_stats(residuals: &[f64], z: &[usize], n_categories: usize) -> Result<CategoryStats> {
    if residuals.len() != z.len() {
        return Err(Error::InvalidInput(format!(
            "residuals length {} != z length {}",
            residuals.len(),
            z.len()
        )));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite residual".into()));
    }
    let mut counts = vec![0usize; n_categories];
    let mut sums = vec![0.0f64; n_categories];
    for (&r, &code) in residuals.iter().zip(z) {
        if code >= n_categories {
            return Err(Error::InvalidInput(format!(
                "category code {code} out of range (G = {n_categories})"
            )));
        }
        counts[code] += 1;
        sums[code] += r;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!("category {empty} is empty")));
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    let mut order: Vec<usize> = (0..n_categories).collect();
    order.sort_by(|&a, &b| {
        means[a]
            .partial_cmp(&means[b])
            .expect("finite means")
            .then(a.cmp(&b))
    });
    Ok(CategoryStats {
        counts,
        means,
        order,
    })
}
