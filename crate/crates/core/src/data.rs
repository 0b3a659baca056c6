//! Dataset and environment representations shared by all estimation modules.
//!
//! A dataset couples a response vector `y`, a covariate matrix `x` and an
//! anchor matrix `a`, all row-aligned. Environments can be supplied either
//! as discrete labels (the ICP path) or through the numeric anchor matrix
//! (the anchor-regression path); discrete labels are converted to anchors
//! via [`dummy_encode`] when needed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-aligned response / covariate / anchor data, the unit of all fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvDataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// Discrete environment ids (1-based), when environments are labelled.
    pub env_labels: Option<Vec<usize>>,
}

impl EnvDataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        a: DMatrix<f64>,
        env_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if x.nrows() != n || a.nrows() != n {
            return Err(Error::Schema(format!(
                "row mismatch: y has {n} rows, x has {}, a has {}",
                x.nrows(),
                a.nrows()
            )));
        }
        if let Some(labels) = &env_labels {
            if labels.len() != n {
                return Err(Error::Schema("env label length mismatch".into()));
            }
        }
        let ds = EnvDataset { y, x, a, env_labels };
        ds.check_finite()?;
        Ok(ds)
    }

    fn check_finite(&self) -> Result<()> {
        for (i, v) in self.y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, column: "Y".into() });
            }
        }
        for j in 0..self.x.ncols() {
            for i in 0..self.x.nrows() {
                if !self.x[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, column: format!("X{}", j + 1) });
                }
            }
        }
        for j in 0..self.a.ncols() {
            for i in 0..self.a.nrows() {
                if !self.a[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, column: format!("A{}", j + 1) });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn r(&self) -> usize {
        self.a.ncols()
    }

    /// Centers every column of `y`, `x` and `a` to empirical mean zero.
    /// The subtracted means are returned so fits can be mapped back to the
    /// original scale.
    pub fn center(&self) -> (EnvDataset, Centering) {
        let n = self.n() as f64;
        let y_mean = self.y.sum() / n;
        let y = self.y.map(|v| v - y_mean);
        let mut x = self.x.clone();
        let mut x_means = Vec::with_capacity(self.p());
        for j in 0..x.ncols() {
            let m = x.column(j).sum() / n;
            x_means.push(m);
            for i in 0..x.nrows() {
                x[(i, j)] -= m;
            }
        }
        let mut a = self.a.clone();
        let mut a_means = Vec::with_capacity(self.r());
        for j in 0..a.ncols() {
            let m = a.column(j).sum() / n;
            a_means.push(m);
            for i in 0..a.nrows() {
                a[(i, j)] -= m;
            }
        }
        let centered = EnvDataset { y, x, a, env_labels: self.env_labels.clone() };
        (centered, Centering { y_mean, x_means, a_means })
    }
}

/// Column means removed by [`EnvDataset::center`].
#[derive(Debug, Clone, PartialEq)]
pub struct Centering {
    pub y_mean: f64,
    pub x_means: Vec<f64>,
    pub a_means: Vec<f64>,
}

/// Disjoint index groups partitioning the sample rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentPartition {
    pub groups: Vec<Vec<usize>>,
}

impl EnvironmentPartition {
    /// Builds a partition from 1-based environment labels. Groups are ordered
    /// by ascending label. `min_group` is the smallest admissible group size.
    pub fn from_labels(labels: &[usize], min_group: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("empty label vector".into()));
        }
        let mut sorted: Vec<usize> = labels.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut groups = Vec::with_capacity(sorted.len());
        for lab in sorted {
            let idx: Vec<usize> =
                (0..labels.len()).filter(|&i| labels[i] == lab).collect();
            if idx.len() < min_group {
                return Err(Error::DegenerateGroup(format!(
                    "environment {lab} has {} rows, need at least {min_group}",
                    idx.len()
                )));
            }
            groups.push(idx);
        }
        Ok(EnvironmentPartition { groups })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }
}

/// A sorted subset of covariate indices (1-based, may be empty).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetS {
    indices: Vec<usize>,
}

impl SubsetS {
    pub fn new(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last > p || indices[0] == 0 {
                return Err(Error::InvalidArgument(format!(
                    "subset index out of range 1..={p}"
                )));
            }
        }
        Ok(SubsetS { indices })
    }

    pub fn empty() -> Self {
        SubsetS { indices: Vec::new() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn intersect(&self, other: &SubsetS) -> SubsetS {
        let indices = self
            .indices
            .iter()
            .copied()
            .filter(|j| other.contains(*j))
            .collect();
        SubsetS { indices }
    }
}

impl std::fmt::Display for SubsetS {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

/// Dummy encoding of 1-based labels in `{1..m}` with level 1 as reference:
/// column k is the indicator of label k+1. Every level must be present.
pub fn dummy_encode(labels: &[usize], m: usize) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::InvalidArgument("need at least 2 levels".into()));
    }
    for level in 1..=m {
        if !labels.contains(&level) {
            return Err(Error::AbsentLevel { level, m });
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < 1 || l > m) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 1..={m}")));
    }
    let n = labels.len();
    let mut out = DMatrix::zeros(n, m - 1);
    for (i, &lab) in labels.iter().enumerate() {
        if lab >= 2 {
            out[(i, lab - 2)] = 1.0;
        }
    }
    Ok(out)
}

/// Expected CSV layout: Y, X1..Xp, A1..Ar and an optional trailing ENV column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSchema {
    pub p: usize,
    pub r: usize,
    pub has_env: bool,
}

impl ColumnSchema {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["Y".to_string()];
        for j in 1..=self.p {
            h.push(format!("X{j}"));
        }
        for j in 1..=self.r {
            h.push(format!("A{j}"));
        }
        if self.has_env {
            h.push("ENV".to_string());
        }
        h
    }

    /// Infers a schema from a header row of the shape Y,X1..Xp,A1..Ar[,ENV].
    pub fn infer(header: &[String]) -> Result<Self> {
        if header.first().map(String::as_str) != Some("Y") {
            return Err(Error::Schema("first column must be Y".into()));
        }
        let mut idx = 1;
        let mut p = 0;
        while idx < header.len() && header[idx] == format!("X{}", p + 1) {
            p += 1;
            idx += 1;
        }
        let mut r = 0;
        while idx < header.len() && header[idx] == format!("A{}", r + 1) {
            r += 1;
            idx += 1;
        }
        let has_env = idx < header.len() && header[idx] == "ENV";
        if has_env {
            idx += 1;
        }
        if idx != header.len() {
            return Err(Error::Schema(format!(
                "unexpected column '{}' at position {idx}",
                header[idx]
            )));
        }
        let schema = ColumnSchema { p, r, has_env };
        Ok(schema)
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("malformed value '{raw}' at row {row}, column {column}")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite { row, column: column.to_string() });
    }
    Ok(v)
}

/// Reads a dataset from CSV. Values are validated but not centered.
pub fn load_csv(path: &std::path::Path, schema: &ColumnSchema) -> Result<EnvDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected = schema.header();
    if header != expected {
        return Err(Error::Schema(format!(
            "header {:?} does not match expected {:?}",
            header, expected
        )));
    }
    let mut ys = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    let mut as_: Vec<f64> = Vec::new();
    let mut envs: Vec<usize> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != expected.len() {
            return Err(Error::Schema(format!(
                "row {row} has {} fields, expected {}",
                rec.len(),
                expected.len()
            )));
        }
        ys.push(parse_cell(&rec[0], row, "Y")?);
        for j in 0..schema.p {
            xs.push(parse_cell(&rec[1 + j], row, &format!("X{}", j + 1))?);
        }
        for j in 0..schema.r {
            as_.push(parse_cell(&rec[1 + schema.p + j], row, &format!("A{}", j + 1))?);
        }
        if schema.has_env {
            let raw = rec[1 + schema.p + schema.r].trim();
            let lab: usize = raw.parse().map_err(|_| {
                Error::Schema(format!("malformed ENV label '{raw}' at row {row}"))
            })?;
            envs.push(lab);
        }
    }
    let n = ys.len();
    let y = DVector::from_vec(ys);
    let x = DMatrix::from_row_slice(n, schema.p, &xs);
    let a = DMatrix::from_row_slice(n, schema.r, &as_);
    EnvDataset::new(y, x, a, if schema.has_env { Some(envs) } else { None })
}

/// Reads a dataset from CSV with the schema inferred from the header row.
pub fn load_csv_auto(path: &std::path::Path) -> Result<EnvDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let schema = ColumnSchema::infer(&header)?;
    load_csv(path, &schema)
}

/// Writes a dataset as CSV. Values are printed with Rust's shortest
/// round-trip float formatting, so `load_csv` reads them back exactly.
pub fn save_csv(path: &std::path::Path, data: &EnvDataset) -> Result<()> {
    let schema = ColumnSchema {
        p: data.p(),
        r: data.r(),
        has_env: data.env_labels.is_some(),
    };
    let mut wtr = csv::WriterBuilder::new().from_path(path)?;
    wtr.write_record(schema.header())?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = Vec::with_capacity(1 + data.p() + data.r() + 1);
        rec.push(format!("{}", data.y[i]));
        for j in 0..data.p() {
            rec.push(format!("{}", data.x[(i, j)]));
        }
        for j in 0..data.r() {
            rec.push(format!("{}", data.a[(i, j)]));
        }
        if let Some(labels) = &data.env_labels {
            rec.push(format!("{}", labels[i]));
        }
        wtr.write_record(rec)?;
    }
    wtr.flush()?;
    Ok(())
}
