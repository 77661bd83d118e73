//! Tabular dataset: numeric response `y`, categorical treatment arm `a`,
//! and a numeric covariate matrix `x` (rows = patients, columns = features).
//!
//! Invariants enforced at construction:
//! - `n >= 2` rows, all `y`/`x` entries finite,
//! - at least two distinct arms, each with at least [`MIN_ARM_SIZE`] rows,
//! - no constant covariate column, unique column names.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of observations required per treatment arm.
pub const MIN_ARM_SIZE: usize = 5;

/// Treatment-arm label. Stored as an opaque string; ordering is
/// numeric-aware: labels that parse as numbers sort numerically (before any
/// non-numeric label), everything else falls back to string order. Equal
/// numeric values with distinct spellings ("1" vs "1.0") are tie-broken by
/// string order so that `Ord` stays consistent with string-based `Eq`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(s: impl Into<String>) -> Self {
        Label(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Numeric value of the label, when it parses as one.
    pub fn as_f64(&self) -> Option<f64> {
        self.0.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label(s)
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.as_f64(), other.as_f64()) {
            (Some(a), Some(b)) => a
                .partial_cmp(&b)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Row indices belonging to one treatment arm, in original dataset order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmView {
    pub label: Label,
    pub rows: Vec<usize>,
}

impl ArmView {
    pub fn n(&self) -> usize {
        self.rows.len()
    }
}

/// Column roles for CSV ingestion. `x_cols` entries are either exact column
/// names or simple glob patterns using `*` (e.g. `"x*"`, `"gene_*"`).
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub y_col: String,
    pub a_col: String,
    pub x_cols: Vec<String>,
}

fn glob_match(pattern: &str, name: &str) -> bool {
    if !pattern.contains('*') {
        return pattern == name;
    }
    let parts: Vec<&str> = pattern.split('*').collect();
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        if i == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == parts.len() - 1 {
            return rest.ends_with(part);
        } else {
            match rest.find(part) {
                Some(pos) => rest = &rest[pos + part.len()..],
                None => return false,
            }
        }
    }
    // Pattern ends with '*' (last part empty) or consumed everything.
    parts.last().is_none_or(|p| p.is_empty()) || rest.is_empty()
}

impl CsvSchema {
    pub fn new(y_col: impl Into<String>, a_col: impl Into<String>, x_cols: Vec<String>) -> Self {
        CsvSchema {
            y_col: y_col.into(),
            a_col: a_col.into(),
            x_cols,
        }
    }

    /// Resolve the schema against a header row. Returns
    /// `(y_index, a_index, covariate_indices)` with covariates in header
    /// order. Exact names must be present; a pattern must match at least one
    /// column; the response/arm columns are never treated as covariates.
    fn resolve(&self, headers: &[String]) -> Result<(usize, usize, Vec<usize>)> {
        let find = |name: &str| headers.iter().position(|h| h == name);
        let y_idx = find(&self.y_col)
            .ok_or_else(|| Error::Schema(format!("response column {:?} not found", self.y_col)))?;
        let a_idx = find(&self.a_col)
            .ok_or_else(|| Error::Schema(format!("treatment column {:?} not found", self.a_col)))?;
        if y_idx == a_idx {
            return Err(Error::Schema(
                "response and treatment columns must differ".into(),
            ));
        }
        if self.x_cols.is_empty() {
            return Err(Error::Schema("no covariate columns requested".into()));
        }
        let mut selected = vec![false; headers.len()];
        for spec in &self.x_cols {
            let mut hit = false;
            for (i, h) in headers.iter().enumerate() {
                if i == y_idx || i == a_idx {
                    continue;
                }
                if glob_match(spec, h) {
                    selected[i] = true;
                    hit = true;
                }
            }
            if !hit {
                return Err(Error::Schema(format!(
                    "covariate selector {spec:?} matched no column"
                )));
            }
        }
        let x_idx: Vec<usize> = (0..headers.len()).filter(|&i| selected[i]).collect();
        if x_idx.is_empty() {
            return Err(Error::Schema("no covariate columns selected".into()));
        }
        Ok((y_idx, a_idx, x_idx))
    }
}

/// In-memory dataset. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    a: Vec<Label>,
    x: Array2<f64>,
    column_names: Vec<String>,
    response_name: String,
    treatment_name: String,
}

impl Dataset {
    /// Build a dataset, enforcing all invariants.
    pub fn new(
        y: Vec<f64>,
        a: Vec<Label>,
        x: Array2<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 observations, got {n}"
            )));
        }
        if a.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.len(),
            });
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.nrows(),
            });
        }
        let p = x.ncols();
        if p == 0 {
            return Err(Error::InvalidData("need at least 1 covariate".into()));
        }
        if column_names.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: column_names.len(),
            });
        }
        for (i, name) in column_names.iter().enumerate() {
            if column_names[..i].contains(name) {
                return Err(Error::Schema(format!("duplicate column name {name:?}")));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "response is not finite at row {}",
                i + 1
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            for (j, col) in x.columns().into_iter().enumerate() {
                if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidData(format!(
                        "covariate {:?} is not finite at row {}",
                        column_names[j],
                        i + 1
                    )));
                }
            }
        }
        for (j, col) in x.columns().into_iter().enumerate() {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return Err(Error::ConstantColumn(column_names[j].clone()));
            }
        }
        let mut counts: BTreeMap<&Label, usize> = BTreeMap::new();
        for label in &a {
            *counts.entry(label).or_insert(0) += 1;
        }
        if counts.len() < 2 {
            return Err(Error::InvalidData(
                "need at least 2 distinct treatment arms".into(),
            ));
        }
        if let Some((label, &count)) = counts.iter().find(|(_, &c)| c < MIN_ARM_SIZE) {
            return Err(Error::InsufficientArm {
                label: label.as_str().to_owned(),
                n: count,
                min: MIN_ARM_SIZE,
            });
        }
        Ok(Dataset {
            y,
            a,
            x,
            column_names,
            response_name: "y".into(),
            treatment_name: "a".into(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn arms(&self) -> &[Label] {
        &self.a
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    /// Distinct response values (exact equality), useful for deciding the
    /// slicing mode.
    pub fn distinct_y_count(&self) -> usize {
        let mut sorted = self.y.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        sorted.len()
    }

    /// Row indices grouped by arm, arms in ascending label order.
    pub fn split_by_arm(&self) -> Vec<ArmView> {
        let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
        for (i, label) in self.a.iter().enumerate() {
            groups.entry(label.clone()).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(label, rows)| ArmView { label, rows })
            .collect()
    }

    /// Observed assignment frequencies `n_a / n`, keyed by arm label.
    pub fn empirical_propensity(&self) -> BTreeMap<Label, f64> {
        let n = self.n() as f64;
        self.split_by_arm()
            .into_iter()
            .map(|v| (v.label, v.rows.len() as f64 / n))
            .collect()
    }

    /// Covariate sub-matrix for one arm view (rows in view order).
    pub fn arm_x(&self, view: &ArmView) -> Array2<f64> {
        let p = self.p();
        let mut out = Array2::zeros((view.rows.len(), p));
        for (r, &i) in view.rows.iter().enumerate() {
            out.row_mut(r).assign(&self.x.row(i));
        }
        out
    }

    /// Response vector for one arm view (rows in view order).
    pub fn arm_y(&self, view: &ArmView) -> Vec<f64> {
        view.rows.iter().map(|&i| self.y[i]).collect()
    }

    /// New dataset keeping only the named covariate columns (in the given
    /// order). Every name must exist.
    pub fn select_columns(&self, names: &[String]) -> Result<Dataset> {
        if names.is_empty() {
            return Err(Error::InvalidData("no covariate columns selected".into()));
        }
        let mut idx = Vec::with_capacity(names.len());
        for name in names {
            match self.column_names.iter().position(|c| c == name) {
                Some(j) => idx.push(j),
                None => return Err(Error::Schema(format!("column {name:?} not found"))),
            }
        }
        let mut x = Array2::zeros((self.n(), idx.len()));
        for (c, &j) in idx.iter().enumerate() {
            x.column_mut(c).assign(&self.x.column(j));
        }
        let mut d = Dataset::new(self.y.clone(), self.a.clone(), x, names.to_vec())?;
        d.response_name = self.response_name.clone();
        d.treatment_name = self.treatment_name.clone();
        Ok(d)
    }

    /// New dataset keeping only the given rows (in the given order). The
    /// subset must still satisfy every dataset invariant.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidData(format!(
                "row index {bad} out of range (n = {})",
                self.n()
            )));
        }
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let a = rows.iter().map(|&i| self.a[i].clone()).collect();
        let mut x = Array2::zeros((rows.len(), self.p()));
        for (r, &i) in rows.iter().enumerate() {
            x.row_mut(r).assign(&self.x.row(i));
        }
        let mut d = Dataset::new(y, a, x, self.column_names.clone())?;
        d.response_name = self.response_name.clone();
        d.treatment_name = self.treatment_name.clone();
        Ok(d)
    }
}

/// Load a dataset from a CSV file according to the schema.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let (y_idx, a_idx, x_idx) = schema.resolve(&headers)?;

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut flat = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_no + 1;
        let cell = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::Parse {
                row,
                column: headers[idx].clone(),
                message: "missing field".into(),
            })
        };
        let parse_num = |idx: usize| -> Result<f64> {
            let raw = cell(idx)?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: headers[idx].clone(),
                message: format!("cannot parse {raw:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[idx].clone(),
                    message: format!("non-finite value {raw:?}"),
                });
            }
            Ok(v)
        };
        y.push(parse_num(y_idx)?);
        let label = cell(a_idx)?;
        if label.is_empty() {
            return Err(Error::Parse {
                row,
                column: headers[a_idx].clone(),
                message: "empty treatment label".into(),
            });
        }
        a.push(Label::new(label));
        for &j in &x_idx {
            flat.push(parse_num(j)?);
        }
    }

    let n = y.len();
    let p = x_idx.len();
    let x = Array2::from_shape_vec((n, p), flat).map_err(|e| Error::InvalidData(e.to_string()))?;
    let column_names = x_idx.iter().map(|&j| headers[j].clone()).collect();
    let mut d = Dataset::new(y, a, x, column_names)?;
    d.response_name = schema.y_col.clone();
    d.treatment_name = schema.a_col.clone();
    Ok(d)
}

/// Load only the named numeric columns from a CSV file, in the given
/// order. Used to score new observations, so no dataset invariants apply
/// beyond finiteness; the file may contain extra columns.
pub fn load_matrix_csv(path: impl AsRef<Path>, columns: &[String]) -> Result<Array2<f64>> {
    if columns.is_empty() {
        return Err(Error::Schema("no columns requested".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut idx = Vec::with_capacity(columns.len());
    let mut missing = Vec::new();
    for name in columns {
        match headers.iter().position(|h| h == name) {
            Some(j) => idx.push(j),
            None => missing.push(name.as_str()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing columns: {}",
            missing.join(", ")
        )));
    }
    let mut flat = Vec::new();
    let mut n = 0usize;
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_no + 1;
        for &j in &idx {
            let raw = record.get(j).ok_or_else(|| Error::Parse {
                row,
                column: headers[j].clone(),
                message: "missing field".into(),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: headers[j].clone(),
                message: format!("cannot parse {raw:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[j].clone(),
                    message: format!("non-finite value {raw:?}"),
                });
            }
            flat.push(v);
        }
        n += 1;
    }
    // A header-only file is a legitimate empty batch.
    Array2::from_shape_vec((n, idx.len()), flat).map_err(|e| Error::InvalidData(e.to_string()))
}

/// Write a dataset to CSV. Numeric cells use the shortest representation
/// that round-trips exactly, so `load_csv(write_csv(d))` reproduces the
/// numeric content bit-for-bit.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![d.response_name.clone(), d.treatment_name.clone()];
    header.extend(d.column_names.iter().cloned());
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..d.n() {
        record.clear();
        record.push(d.y[i].to_string());
        record.push(d.a[i].as_str().to_owned());
        for j in 0..d.p() {
            record.push(d.x[[i, j]].to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
