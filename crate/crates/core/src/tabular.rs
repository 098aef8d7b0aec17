//! Typed tabular data: schema, table, CSV ingestion, the ReMIA split and the
//! feature encodings shared by every metric (standardization, one-hot,
//! quantile normalization, PCA).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::seeded_rng;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    Header {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}, column '{column}': {reason}")]
    Cell {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("row {row}: expected {expected} cells, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate row id {0}")]
    DuplicateRowId(u64),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("{0}")]
    Empty(String),
    #[error("PCA retained no components (data has zero variance)")]
    RankCollapse,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TableError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl Column {
    pub fn numerical(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numerical,
            categories: None,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: None,
        }
    }

    pub fn with_categories<S: Into<String>>(mut self, cats: impl IntoIterator<Item = S>) -> Self {
        self.categories = Some(cats.into_iter().map(Into::into).collect());
        self
    }
}

/// Ordered column list. Names are unique and non-empty; at least one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(TableError::Schema("schema has no columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if c.name.is_empty() {
                return Err(TableError::Schema("empty column name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(TableError::Schema(format!("duplicate column '{}'", c.name)));
            }
            match (&c.kind, &c.categories) {
                (ColumnKind::Numerical, Some(_)) => {
                    return Err(TableError::Schema(format!(
                        "numerical column '{}' declares categories",
                        c.name
                    )))
                }
                (ColumnKind::Categorical, Some(cats)) => {
                    let uniq: HashSet<_> = cats.iter().collect();
                    if uniq.len() != cats.len() {
                        return Err(TableError::Schema(format!(
                            "column '{}' declares duplicate categories",
                            c.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(Schema { columns })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            columns: Vec<Column>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        Schema::new(raw.columns)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        Schema::from_json(&text)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Schema restricted to the given column indices, in the given order.
    pub fn project(&self, indices: &[usize]) -> Result<Self> {
        Schema::new(indices.iter().map(|&i| self.columns[i].clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(Arc<str>),
}

impl Cell {
    pub fn cat(s: &str) -> Self {
        Cell::Cat(Arc::from(s))
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Cell::Cat(s) => Some(s),
            Cell::Num(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Cat(s) => f.write_str(s),
        }
    }
}

/// Row-major table with a stable integer identity per row.
#[derive(Debug, Clone)]
pub struct Table {
    schema: Arc<Schema>,
    rows: Vec<Vec<Cell>>,
    row_ids: Vec<u64>,
}

impl Table {
    /// Builds a table, validating cell kinds, finiteness, declared categories
    /// and row-id uniqueness.
    pub fn new(schema: Arc<Schema>, rows: Vec<Vec<Cell>>, row_ids: Vec<u64>) -> Result<Self> {
        if rows.len() != row_ids.len() {
            return Err(TableError::SchemaMismatch(format!(
                "{} rows but {} row ids",
                rows.len(),
                row_ids.len()
            )));
        }
        let declared: Vec<Option<HashSet<&str>>> = schema
            .columns()
            .iter()
            .map(|c| c.categories.as_ref().map(|v| v.iter().map(String::as_str).collect()))
            .collect();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::RowLength {
                    row: r,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
            for (j, (cell, col)) in row.iter().zip(schema.columns()).enumerate() {
                let bad = |reason: &str| TableError::Cell {
                    row: r,
                    column: col.name.clone(),
                    reason: reason.to_string(),
                };
                match (cell, col.kind) {
                    (Cell::Num(v), ColumnKind::Numerical) => {
                        if !v.is_finite() {
                            return Err(bad("non-finite numerical value"));
                        }
                    }
                    (Cell::Cat(s), ColumnKind::Categorical) => {
                        if s.is_empty() {
                            return Err(bad("missing value"));
                        }
                        if let Some(set) = &declared[j] {
                            if !set.contains(&**s) {
                                return Err(bad(&format!("undeclared category '{s}'")));
                            }
                        }
                    }
                    _ => return Err(bad("cell kind does not match column kind")),
                }
            }
        }
        let mut seen = HashSet::with_capacity(row_ids.len());
        for &id in &row_ids {
            if !seen.insert(id) {
                return Err(TableError::DuplicateRowId(id));
            }
        }
        Ok(Table {
            schema,
            rows,
            row_ids,
        })
    }

    /// Table with row ids `0..n`.
    pub fn from_rows(schema: Arc<Schema>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let ids = (0..rows.len() as u64).collect();
        Table::new(schema, rows, ids)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Cell] {
        &self.rows[i]
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_columns(&self) -> usize {
        self.schema.len()
    }

    /// Rows at `indices` (in that order), keeping their row ids.
    pub fn select(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Same cells, row ids reassigned to `start..start+n`.
    pub fn with_fresh_ids(mut self, start: u64) -> Table {
        self.row_ids = (start..start + self.rows.len() as u64).collect();
        self
    }

    /// Concatenation keeping row ids. Fails on schema mismatch or id collision.
    pub fn concat(parts: &[&Table]) -> Result<Table> {
        let first = parts
            .first()
            .ok_or_else(|| TableError::Empty("nothing to concatenate".into()))?;
        let mut rows = Vec::new();
        let mut ids = Vec::new();
        for t in parts {
            if t.schema() != first.schema() {
                return Err(TableError::SchemaMismatch("concatenating different schemas".into()));
            }
            rows.extend(t.rows.iter().cloned());
            ids.extend_from_slice(&t.row_ids);
        }
        Table::new(first.schema.clone(), rows, ids)
    }

    /// Concatenation with row ids renumbered from zero.
    pub fn stack(parts: &[&Table]) -> Result<Table> {
        let first = parts
            .first()
            .ok_or_else(|| TableError::Empty("nothing to concatenate".into()))?;
        let mut rows = Vec::new();
        for t in parts {
            if t.schema() != first.schema() {
                return Err(TableError::SchemaMismatch("concatenating different schemas".into()));
            }
            rows.extend(t.rows.iter().cloned());
        }
        Table::from_rows(first.schema.clone(), rows)
    }

    /// Values of a numerical column.
    pub fn numeric_column(&self, j: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r[j].as_num().expect("numerical column"))
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<Cell> {
        self.rows.iter().map(|r| r[j].clone()).collect()
    }

    /// Keeps only the given columns.
    pub fn project(&self, indices: &[usize]) -> Result<Table> {
        let schema = Arc::new(self.schema.project(indices)?);
        let rows = self
            .rows
            .iter()
            .map(|r| indices.iter().map(|&j| r[j].clone()).collect())
            .collect();
        Ok(Table {
            schema,
            rows,
            row_ids: self.row_ids.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            wr.write_record(row.iter().map(|c| c.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    /// Canonical CSV bytes (header plus shortest round-trip float formatting).
    pub fn canonical_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }
}

/// Parses CSV text against a schema; row ids are `0..n` in file order.
pub fn read_table<R: Read>(reader: R, schema: Arc<Schema>) -> Result<Table> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
    let expected = schema.names();
    if header != expected {
        return Err(TableError::Header {
            expected,
            found: header,
        });
    }
    let mut rows = Vec::new();
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != schema.len() {
            return Err(TableError::RowLength {
                row: r,
                expected: schema.len(),
                found: rec.len(),
            });
        }
        let mut row = Vec::with_capacity(rec.len());
        for (field, col) in rec.iter().zip(schema.columns()) {
            let bad = |reason: String| TableError::Cell {
                row: r,
                column: col.name.clone(),
                reason,
            };
            if field.is_empty() {
                return Err(bad("missing value".into()));
            }
            row.push(match col.kind {
                ColumnKind::Numerical => {
                    let v: f64 = field
                        .trim()
                        .parse()
                        .map_err(|_| bad(format!("cannot parse '{field}' as a number")))?;
                    if !v.is_finite() {
                        return Err(bad(format!("non-finite value '{field}'")));
                    }
                    Cell::Num(v)
                }
                ColumnKind::Categorical => Cell::cat(field),
            });
        }
        rows.push(row);
    }
    Table::from_rows(schema, rows)
}

pub fn load_table(csv_path: impl AsRef<Path>, schema_path: impl AsRef<Path>) -> Result<Table> {
    let schema = Arc::new(Schema::load(schema_path)?);
    read_table(File::open(csv_path)?, schema)
}

/// The disjoint target/shared partition and the two training sets built from it.
#[derive(Debug, Clone)]
pub struct RemiaSplit {
    pub t1: Table,
    pub t2: Table,
    pub r: Table,
    pub x1: Table,
    pub x2: Table,
    pub f: f64,
}

impl RemiaSplit {
    pub fn records_used(&self) -> usize {
        self.t1.len() + self.t2.len() + self.r.len()
    }
}

/// Per-source target count `floor(f/(1+f) * n)`.
pub fn target_size(n: usize, f: f64) -> usize {
    // Nudge before flooring so exact products like 0.5/1.5*1500 land on 500.
    ((f * n as f64) / (1.0 + f) + 1e-9).floor() as usize
}

/// Seeded split into T1, T2 (each `floor(f/(1+f) |D|)` rows) and R (the rest).
pub fn split_remia(d: &Table, f: f64, seed: u64) -> Result<RemiaSplit> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(TableError::Split(format!(
            "target fraction {f} outside the valid range (0, 1]"
        )));
    }
    let n = d.len();
    let t = target_size(n, f);
    if n < 4 || t < 1 {
        return Err(TableError::Split(format!(
            "dataset of {n} rows is too small for target fraction {f}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let r_len = n - 2 * t;
    let t1 = d.select(&order[..t]);
    let t2 = d.select(&order[t..2 * t]);
    let r = d.select(&order[2 * t..2 * t + r_len]);
    let x1 = Table::concat(&[&t1, &r])?;
    let x2 = Table::concat(&[&t2, &r])?;
    Ok(RemiaSplit { t1, t2, r, x1, x2, f })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum EncodedColumn {
    Numerical { mean: f64, std: f64 },
    Categorical { vocab: Vec<String> },
}

/// Fitted standardization and one-hot vocabularies.
#[derive(Debug, Clone)]
pub struct EncoderState {
    schema: Arc<Schema>,
    columns: Vec<EncodedColumn>,
    lookup: Vec<HashMap<String, usize>>,
    dim: usize,
}

impl EncoderState {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(mean, std)` of column `j` if numerical.
    pub fn moments(&self, j: usize) -> Option<(f64, f64)> {
        match &self.columns[j] {
            EncodedColumn::Numerical { mean, std } => Some((*mean, *std)),
            EncodedColumn::Categorical { .. } => None,
        }
    }

    pub fn vocabulary(&self, j: usize) -> Option<&[String]> {
        match &self.columns[j] {
            EncodedColumn::Categorical { vocab } => Some(vocab),
            EncodedColumn::Numerical { .. } => None,
        }
    }
}

/// Population mean/std per numerical column; vocabulary per categorical column
/// (declared order first, then first appearance).
pub fn fit_encoder(reference: &Table) -> Result<EncoderState> {
    if reference.is_empty() {
        return Err(TableError::Empty("cannot fit an encoder on an empty table".into()));
    }
    let n = reference.len() as f64;
    let mut columns = Vec::new();
    let mut lookup = Vec::new();
    let mut dim = 0;
    for (j, col) in reference.schema().columns().iter().enumerate() {
        match col.kind {
            ColumnKind::Numerical => {
                let vals = reference.numeric_column(j);
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                let std = if std > 0.0 { std } else { 1.0 };
                columns.push(EncodedColumn::Numerical { mean, std });
                lookup.push(HashMap::new());
                dim += 1;
            }
            ColumnKind::Categorical => {
                let mut vocab: Vec<String> = col.categories.clone().unwrap_or_default();
                let mut map: HashMap<String, usize> =
                    vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
                for row in reference.rows() {
                    let s = row[j].as_cat().expect("categorical column");
                    if !map.contains_key(s) {
                        map.insert(s.to_string(), vocab.len());
                        vocab.push(s.to_string());
                    }
                }
                dim += vocab.len();
                columns.push(EncodedColumn::Categorical { vocab });
                lookup.push(map);
            }
        }
    }
    Ok(EncoderState {
        schema: reference.schema_arc().clone(),
        columns,
        lookup,
        dim,
    })
}

/// Standardized numerical cells and one-hot categorical blocks; unseen
/// categories encode as an all-zero block.
pub fn encode(t: &Table, enc: &EncoderState) -> Result<Array2<f64>> {
    if t.schema().columns().len() != enc.schema.columns().len()
        || t
            .schema()
            .columns()
            .iter()
            .zip(enc.schema.columns())
            .any(|(a, b)| a.name != b.name || a.kind != b.kind)
    {
        return Err(TableError::SchemaMismatch(
            "table does not match the encoder's schema".into(),
        ));
    }
    let mut out = Array2::zeros((t.len(), enc.dim));
    for (i, row) in t.rows().iter().enumerate() {
        let mut offset = 0;
        for (j, (cell, col)) in row.iter().zip(&enc.columns).enumerate() {
            match col {
                EncodedColumn::Numerical { mean, std } => {
                    out[[i, offset]] = (cell.as_num().expect("numerical") - mean) / std;
                    offset += 1;
                }
                EncodedColumn::Categorical { vocab } => {
                    if let Some(&k) = enc.lookup[j].get(cell.as_cat().expect("categorical")) {
                        out[[i, offset + k]] = 1.0;
                    }
                    offset += vocab.len();
                }
            }
        }
    }
    Ok(out)
}

/// Empirical quantile normalization of one numerical column onto N(0, 1).
#[derive(Debug, Clone)]
pub struct QuantileMap {
    sorted: Vec<f64>,
    normal: Normal,
}

impl QuantileMap {
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    fn eps(&self) -> f64 {
        0.5 / self.sorted.len() as f64
    }

    /// Mid-quantile `(rank - 0.5)/n` with average ranks for ties; values
    /// between reference points interpolate linearly.
    pub fn quantile(&self, x: f64) -> f64 {
        let n = self.sorted.len();
        let lo = self.sorted.partition_point(|&v| v < x);
        let hi = self.sorted.partition_point(|&v| v <= x);
        let pos = if hi > lo {
            // average 0-based index of the tie group
            (lo + hi - 1) as f64 / 2.0
        } else if lo == 0 {
            0.0
        } else if lo == n {
            (n - 1) as f64
        } else {
            let (a, b) = (self.sorted[lo - 1], self.sorted[lo]);
            (lo - 1) as f64 + (x - a) / (b - a)
        };
        (pos + 0.5) / n as f64
    }

    pub fn forward(&self, x: f64) -> f64 {
        let eps = self.eps();
        normal_quantile(&self.normal, self.quantile(x).clamp(eps, 1.0 - eps))
    }

    pub fn inverse(&self, z: f64) -> f64 {
        let n = self.sorted.len();
        let eps = self.eps();
        let q = self.normal.cdf(z).clamp(eps, 1.0 - eps);
        let mut pos = q * n as f64 - 0.5;
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            pos = nearest;
        }
        let pos = pos.clamp(0.0, (n - 1) as f64);
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if frac == 0.0 || i + 1 >= n {
            self.sorted[i]
        } else {
            let (a, b) = (self.sorted[i], self.sorted[i + 1]);
            a + frac * (b - a)
        }
    }
}

/// Standard-normal quantile polished with Newton steps on the CDF so that
/// `cdf(normal_quantile(q))` reproduces `q` to near machine precision.
fn normal_quantile(normal: &Normal, q: f64) -> f64 {
    let mut z = normal.inverse_cdf(q);
    for _ in 0..2 {
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density <= 0.0 {
            break;
        }
        z -= (normal.cdf(z) - q) / density;
    }
    z
}

pub fn fit_quantile_map(values: &[f64]) -> Result<QuantileMap> {
    if values.len() < 2 {
        return Err(TableError::Empty(
            "quantile map needs at least 2 values".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TableError::Empty("quantile map values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(QuantileMap {
        sorted,
        normal: Normal::new(0.0, 1.0).expect("standard normal"),
    })
}

#[derive(Debug, Clone)]
pub struct PcaState {
    pub mean: Array1<f64>,
    /// `dim × k`, columns orthonormal.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaState {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn inverse_transform(&self, reduced: &Array2<f64>) -> Array2<f64> {
        reduced.dot(&self.components.t()) + &self.mean
    }
}

const PCA_RELATIVE_FLOOR: f64 = 1e-10;

/// Leading eigenvectors of the centered covariance, enough to reach
/// `variance_keep` of the total variance, dropping near-null directions.
pub fn pca_fit(x: &Array2<f64>, variance_keep: f64) -> Result<PcaState> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(TableError::Empty("PCA on an empty matrix".into()));
    }
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(TableError::Empty(format!(
            "variance_keep {variance_keep} outside (0, 1]"
        )));
    }
    let n = x.nrows();
    let d = x.ncols();
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t().dot(&centered) / denom;
    let mat = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = nalgebra::SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if largest <= 0.0 {
        return Err(TableError::RankCollapse);
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > PCA_RELATIVE_FLOOR * largest)
        .collect();
    let total: f64 = kept.iter().map(|&i| eig.eigenvalues[i]).sum();
    let mut k = 0;
    let mut acc = 0.0;
    for &i in &kept {
        acc += eig.eigenvalues[i];
        k += 1;
        if acc >= variance_keep * total * (1.0 - 1e-12) {
            break;
        }
    }
    let mut components = Array2::zeros((d, k));
    for (c, &i) in kept[..k].iter().enumerate() {
        for r in 0..d {
            components[[r, c]] = eig.eigenvectors[(r, i)];
        }
    }
    Ok(PcaState {
        mean,
        components,
        explained_variance: kept[..k].iter().map(|&i| eig.eigenvalues[i]).collect(),
    })
}

pub fn pca_transform(x: &Array2<f64>, state: &PcaState) -> Array2<f64> {
    (x - &state.mean).dot(&state.components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn schema2() -> Arc<Schema> {
        Arc::new(
            Schema::new(vec![Column::numerical("age"), Column::categorical("sex")]).unwrap(),
        )
    }

    fn numeric_table(n: usize) -> Table {
        let schema = Arc::new(Schema::new(vec![Column::numerical("x")]).unwrap());
        Table::from_rows(schema, (0..n).map(|i| vec![Cell::Num(i as f64)]).collect()).unwrap()
    }

    #[test]
    fn loads_csv_with_schema() {
        let t = read_table("age,sex\n31,M\n45.5,F\n22,M\n".as_bytes(), schema2()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.row_ids(), &[0, 1, 2]);
        assert_eq!(t.row(1)[0], Cell::Num(45.5));
        assert_eq!(t.row(2)[1].as_cat(), Some("M"));
    }

    #[test]
    fn header_order_mismatch_is_rejected() {
        let err = read_table("sex,age\nM,31\n".as_bytes(), schema2()).unwrap_err();
        assert!(matches!(err, TableError::Header { .. }));
    }

    #[test]
    fn unparseable_number_names_row_and_column() {
        let err = read_table("age,sex\n31,M\nabc,F\n".as_bytes(), schema2()).unwrap_err();
        match err {
            TableError::Cell { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "age");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_and_undeclared_values_are_rejected() {
        assert!(read_table("age,sex\n,M\n".as_bytes(), schema2()).is_err());
        let declared = Arc::new(
            Schema::from_json(
                r#"{"columns":[{"name":"age","kind":"numerical"},{"name":"sex","kind":"categorical","categories":["M","F"]}]}"#,
            )
            .unwrap(),
        );
        assert!(read_table("age,sex\n3,X\n".as_bytes(), declared.clone()).is_err());
        assert!(read_table("age,sex\n3,F\n".as_bytes(), declared).is_ok());
    }

    #[test]
    fn schema_rejects_duplicates_and_empty() {
        assert!(Schema::new(vec![]).is_err());
        assert!(Schema::new(vec![Column::numerical("a"), Column::categorical("a")]).is_err());
        assert!(Schema::new(vec![Column::numerical("")]).is_err());
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let s = split_remia(&numeric_table(2000), 1.0, 3).unwrap();
        assert_eq!((s.t1.len(), s.t2.len(), s.r.len()), (1000, 1000, 0));
        assert_eq!((s.x1.len(), s.x2.len()), (1000, 1000));

        let s = split_remia(&numeric_table(1500), 0.5, 3).unwrap();
        assert_eq!((s.t1.len(), s.t2.len(), s.r.len()), (500, 500, 500));
        assert_eq!(s.x1.len(), 1000);
    }

    #[test]
    fn split_is_deterministic() {
        let d = numeric_table(101);
        let a = split_remia(&d, 0.7, 11).unwrap();
        let b = split_remia(&d, 0.7, 11).unwrap();
        assert_eq!(a.t1.row_ids(), b.t1.row_ids());
        assert_eq!(a.r.row_ids(), b.r.row_ids());
        let c = split_remia(&d, 0.7, 12).unwrap();
        assert_ne!(a.t1.row_ids(), c.t1.row_ids());
    }

    #[test]
    fn split_rejects_bad_inputs() {
        assert!(split_remia(&numeric_table(100), 0.0, 0).is_err());
        assert!(split_remia(&numeric_table(100), 1.5, 0).is_err());
        assert!(split_remia(&numeric_table(3), 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_invariants(n in 4usize..300, f in 0.05f64..=1.0, seed in any::<u64>()) {
            let d = numeric_table(n);
            prop_assume!(target_size(n, f) >= 1);
            let s = split_remia(&d, f, seed).unwrap();
            let ids = |t: &Table| t.row_ids().iter().copied().collect::<HashSet<_>>();
            let (a, b, r) = (ids(&s.t1), ids(&s.t2), ids(&s.r));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&r) && b.is_disjoint(&r));
            prop_assert_eq!(s.t1.len(), target_size(n, f));
            prop_assert_eq!(s.t2.len(), s.t1.len());
            prop_assert_eq!(s.r.len(), n - 2 * s.t1.len());
            prop_assert_eq!(ids(&s.x1), a.union(&r).copied().collect::<HashSet<_>>());
            prop_assert_eq!(ids(&s.x2), b.union(&r).copied().collect::<HashSet<_>>());
            prop_assert!(s.records_used() <= n);
        }
    }

    #[test]
    fn encoder_uses_population_std() {
        let schema = Arc::new(
            Schema::new(vec![
                Column::numerical("x"),
                Column::numerical("c"),
                Column::categorical("k"),
            ])
            .unwrap(),
        );
        let rows = vec![
            vec![Cell::Num(1.0), Cell::Num(5.0), Cell::cat("a")],
            vec![Cell::Num(2.0), Cell::Num(5.0), Cell::cat("b")],
            vec![Cell::Num(3.0), Cell::Num(5.0), Cell::cat("a")],
        ];
        let t = Table::from_rows(schema, rows).unwrap();
        let enc = fit_encoder(&t).unwrap();
        let (m, s) = enc.moments(0).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(enc.moments(1).unwrap(), (5.0, 1.0));
        assert_eq!(enc.vocabulary(2).unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(enc.dim(), 4);
        let x = encode(&t, &enc).unwrap();
        assert_eq!(x[[1, 0]], 0.0);
        assert_eq!(x.row(1).to_vec()[2..], [0.0, 1.0]);
    }

    #[test]
    fn one_hot_blocks_and_unseen_categories() {
        let schema = Arc::new(Schema::new(vec![Column::categorical("k")]).unwrap());
        let mk = |v: &[&str]| {
            Table::from_rows(schema.clone(), v.iter().map(|s| vec![Cell::cat(s)]).collect())
                .unwrap()
        };
        let enc = fit_encoder(&mk(&["a", "b", "c"])).unwrap();
        let x = encode(&mk(&["b", "zzz"]), &enc).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(x.row(1).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn declared_vocabulary_order_wins() {
        let schema = Arc::new(
            Schema::new(vec![Column::categorical("k").with_categories(["z", "y", "x"])]).unwrap(),
        );
        let t = Table::from_rows(schema, vec![vec![Cell::cat("x")]]).unwrap();
        let enc = fit_encoder(&t).unwrap();
        assert_eq!(enc.vocabulary(0).unwrap(), &["z", "y", "x"]);
        assert_eq!(encode(&t, &enc).unwrap().row(0).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn encode_rejects_other_schema() {
        let enc = fit_encoder(&numeric_table(3)).unwrap();
        let other = Table::from_rows(schema2(), vec![vec![Cell::Num(1.0), Cell::cat("M")]]).unwrap();
        assert!(encode(&other, &enc).is_err());
    }

    proptest! {
        #[test]
        fn encoding_is_invertible_and_blocks_sum_to_one(
            vals in prop::collection::vec((-1e3f64..1e3, 0usize..4), 2..40)
        ) {
            let schema = Arc::new(Schema::new(vec![Column::numerical("x"), Column::categorical("k")]).unwrap());
            let rows: Vec<_> = vals.iter().map(|&(v, k)| vec![Cell::Num(v), Cell::cat(&k.to_string())]).collect();
            let t = Table::from_rows(schema, rows).unwrap();
            let enc = fit_encoder(&t).unwrap();
            let x = encode(&t, &enc).unwrap();
            let (m, s) = enc.moments(0).unwrap();
            for (i, &(v, _)) in vals.iter().enumerate() {
                prop_assert!((x[[i, 0]] * s + m - v).abs() <= 1e-9 * (1.0 + v.abs()));
                let block: f64 = x.row(i).iter().skip(1).sum();
                prop_assert_eq!(block, 1.0);
            }
        }
    }

    #[test]
    fn quantile_map_median_and_roundtrip() {
        let vals = [3.0, -1.0, 7.5, 0.2, 10.0];
        let q = fit_quantile_map(&vals).unwrap();
        assert_eq!(q.forward(3.0), 0.0);
        for &v in &vals {
            assert_eq!(q.inverse(q.forward(v)), v);
        }
        assert!(fit_quantile_map(&[1.0]).is_err());
    }

    #[test]
    fn quantile_map_ties_and_clamping() {
        let q = fit_quantile_map(&[1.0, 2.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(q.quantile(2.0), 0.5);
        assert_eq!(q.inverse(q.forward(2.0)), 2.0);
        assert_eq!(q.inverse(50.0), 5.0);
        assert_eq!(q.inverse(-50.0), 1.0);
        assert!(q.forward(-100.0).is_finite());
    }

    #[test]
    fn quantile_map_of_normal_sample_is_normal() {
        let mut rng = seeded_rng(2024);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let q = fit_quantile_map(&xs).unwrap();
        let mut zs: Vec<f64> = xs.iter().map(|&x| q.forward(x)).collect();
        zs.sort_by(f64::total_cmp);
        // KS distance against the exact N(0,1) CDF
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = zs.len() as f64;
        let ks = zs
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                let c = normal.cdf(z);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.02, "ks = {ks}");
    }

    proptest! {
        #[test]
        fn quantile_forward_is_monotone_and_roundtrips(
            vals in prop::collection::hash_set(-1_000_000i64..1_000_000, 2..60),
            probes in prop::collection::vec(-2e6f64..2e6, 1..20),
        ) {
            let vals: Vec<f64> = vals.into_iter().map(|v| v as f64 / 7.0).collect();
            let q = fit_quantile_map(&vals).unwrap();
            for &v in &vals {
                prop_assert_eq!(q.inverse(q.forward(v)), v);
            }
            let mut p = probes.clone();
            p.sort_by(f64::total_cmp);
            for w in p.windows(2) {
                prop_assert!(q.forward(w[0]) <= q.forward(w[1]));
            }
        }
    }

    #[test]
    fn pca_on_a_line_keeps_one_component() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| if j == 0 { i as f64 } else { 2.0 * i as f64 + 1.0 });
        let st = pca_fit(&x, 1.0).unwrap();
        assert_eq!(st.n_components(), 1);
        let back = st.inverse_transform(&pca_transform(&x, &st));
        assert!((&back - &x).iter().all(|e| e.abs() < 1e-9));
    }

    #[test]
    fn pca_duplicated_column_contributes_once() {
        let mut rng = seeded_rng(5);
        let base = Array2::from_shape_fn((40, 2), |_| rng.random::<f64>());
        let x = Array2::from_shape_fn((40, 3), |(i, j)| base[[i, j.min(1)]]);
        let st = pca_fit(&x, 1.0).unwrap();
        assert_eq!(st.n_components(), 2);
    }

    #[test]
    fn pca_full_reconstruction_and_orthonormality() {
        let mut rng = seeded_rng(6);
        let x = Array2::from_shape_fn((50, 5), |_| rng.random::<f64>() * 4.0 - 2.0);
        let st = pca_fit(&x, 1.0).unwrap();
        assert_eq!(st.n_components(), 5);
        let gram = st.components.t().dot(&st.components);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-8);
            }
        }
        assert!(st.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let back = st.inverse_transform(&pca_transform(&x, &st));
        assert!((&back - &x).iter().all(|e| e.abs() < 1e-8));
    }

    #[test]
    fn pca_errors() {
        assert!(pca_fit(&Array2::zeros((0, 3)), 0.9).is_err());
        assert!(matches!(pca_fit(&Array2::ones((5, 2)), 0.9), Err(TableError::RankCollapse)));
    }
}
