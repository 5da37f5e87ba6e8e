//! Tabular data loading, one-hot encoding, standardization and splitting.
//!
//! A [`Dataset`] keeps a dense `n x d` feature matrix together with
//! per-column metadata. Every column belongs to a *group*: the original
//! feature it was derived from. Before encoding each group has one column;
//! one-hot encoding expands a categorical group into one indicator column
//! per category, so a grouped penalty can select or drop the whole feature.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PieError, Result};

/// Declared type of one CSV column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchemaKind {
    Numeric,
    Categorical { categories: Vec<String> },
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: SchemaKind,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: SchemaKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: SchemaKind::Categorical {
                categories: categories.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    pub fn target(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: SchemaKind::Target,
        }
    }
}

/// Checks the schema invariants: unique names, exactly one target,
/// duplicate-free category lists.
pub fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    let mut names = BTreeSet::new();
    let mut targets = 0;
    for col in schema {
        if !names.insert(col.name.as_str()) {
            return Err(PieError::Schema(format!("duplicate column {:?}", col.name)));
        }
        match &col.kind {
            SchemaKind::Target => targets += 1,
            SchemaKind::Categorical { categories } => {
                if categories.is_empty() {
                    return Err(PieError::Schema(format!(
                        "categorical column {:?} has no categories",
                        col.name
                    )));
                }
                let unique: BTreeSet<_> = categories.iter().collect();
                if unique.len() != categories.len() {
                    return Err(PieError::Schema(format!(
                        "categorical column {:?} lists a category twice",
                        col.name
                    )));
                }
            }
            SchemaKind::Numeric => {}
        }
    }
    if targets != 1 {
        return Err(PieError::Schema(format!(
            "expected exactly one target column, found {targets}"
        )));
    }
    Ok(())
}

/// Reads a JSON schema sidecar: `[{"name":"x1","kind":"numeric"}, ...]`.
pub fn load_schema(path: impl AsRef<Path>) -> Result<Vec<ColumnSchema>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PieError::io(path, e))?;
    let schema: Vec<ColumnSchema> =
        serde_json::from_str(&text).map_err(|e| PieError::Schema(e.to_string()))?;
    validate_schema(&schema)?;
    Ok(schema)
}

/// Metadata of one column of the feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    /// Index into [`Dataset::feature_names`].
    pub group: usize,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    /// Raw category codes (index into `categories`), before encoding.
    Categorical { categories: Vec<String> },
    /// 0/1 column produced by one-hot encoding.
    Indicator { category: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Option<Array1<f64>>,
    columns: Vec<Column>,
    feature_names: Vec<String>,
    target_name: Option<String>,
    warnings: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Option<Array1<f64>>,
        columns: Vec<Column>,
        feature_names: Vec<String>,
        target_name: Option<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(PieError::InvalidData("dataset has no rows".into()));
        }
        if columns.len() != x.ncols() {
            return Err(PieError::InvalidData(format!(
                "{} column descriptors for {} matrix columns",
                columns.len(),
                x.ncols()
            )));
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(PieError::InvalidData(format!(
                    "target has {} entries for {n} rows",
                    y.len()
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(PieError::InvalidData("target contains non-finite values".into()));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PieError::InvalidData("features contain non-finite values".into()));
        }
        if let Some(c) = columns.iter().find(|c| c.group >= feature_names.len()) {
            return Err(PieError::InvalidData(format!(
                "column {:?} refers to unknown group {}",
                c.name, c.group
            )));
        }
        Ok(Dataset {
            x,
            y,
            columns,
            feature_names,
            target_name,
            warnings: Vec::new(),
        })
    }

    /// Builds an all-numeric dataset, one group per column.
    pub fn from_numeric(x: Array2<f64>, y: Option<Array1<f64>>, names: &[String]) -> Result<Self> {
        let columns = names
            .iter()
            .enumerate()
            .map(|(group, name)| Column {
                name: name.clone(),
                group,
                kind: ColumnKind::Numeric,
            })
            .collect();
        Dataset::new(x, y, columns, names.to_vec(), Some("y".to_string()))
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn targets(&self) -> Option<&Array1<f64>> {
        self.y.as_ref()
    }

    pub fn y(&self) -> Result<&Array1<f64>> {
        self.y.as_ref().ok_or(PieError::MissingTarget)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Original feature names, indexed by group id.
    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> Option<&str> {
        self.target_name.as_deref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Column indices belonging to each group, in column order.
    pub fn group_columns(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.feature_names.len()];
        for (idx, col) in self.columns.iter().enumerate() {
            groups[col.group].push(idx);
        }
        groups
    }

    pub fn is_encoded(&self) -> bool {
        !self
            .columns
            .iter()
            .any(|c| matches!(c.kind, ColumnKind::Categorical { .. }))
    }

    /// Rows selected by `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.as_ref().map(|y| y.select(Axis(0), rows)),
            columns: self.columns.clone(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Drops columns by index, removing groups left without columns.
    fn drop_columns(&self, drop: &BTreeSet<usize>) -> Dataset {
        let keep: Vec<usize> = (0..self.n_columns()).filter(|c| !drop.contains(c)).collect();
        let mut used: Vec<usize> = keep.iter().map(|&c| self.columns[c].group).collect();
        used.dedup();
        let remap: HashMap<usize, usize> =
            used.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let columns = keep
            .iter()
            .map(|&c| {
                let mut col = self.columns[c].clone();
                col.group = remap[&col.group];
                col
            })
            .collect();
        Dataset {
            x: self.x.select(Axis(1), &keep),
            y: self.y.clone(),
            columns,
            feature_names: used.iter().map(|&g| self.feature_names[g].clone()).collect(),
            target_name: self.target_name.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Loads a CSV file whose header must match `schema` exactly.
pub fn load_csv(path: impl AsRef<Path>, schema: &[ColumnSchema]) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, true)
}

/// Like [`load_csv`], but the target column may be absent (prediction input).
pub fn load_csv_features(path: impl AsRef<Path>, schema: &[ColumnSchema]) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, false)
}

fn read_csv(path: &Path, schema: &[ColumnSchema], require_target: bool) -> Result<Dataset> {
    validate_schema(schema)?;
    let file = File::open(path).map_err(|e| PieError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let position: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    if position.len() != header.len() {
        return Err(PieError::Schema("duplicate column in CSV header".into()));
    }
    let target = schema
        .iter()
        .find(|c| c.kind == SchemaKind::Target)
        .expect("validated schema has a target");
    let has_target = position.contains_key(target.name.as_str());
    let missing: Vec<String> = schema
        .iter()
        .filter(|c| !position.contains_key(c.name.as_str()))
        .filter(|c| require_target || c.kind != SchemaKind::Target)
        .map(|c| c.name.clone())
        .collect();
    let known: BTreeSet<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    let extra: Vec<String> = header
        .iter()
        .filter(|h| !known.contains(h.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(PieError::HeaderMismatch { missing, extra });
    }

    let features: Vec<&ColumnSchema> = schema
        .iter()
        .filter(|c| c.kind != SchemaKind::Target)
        .collect();
    let lookups: Vec<Option<HashMap<&str, usize>>> = features
        .iter()
        .map(|c| match &c.kind {
            SchemaKind::Categorical { categories } => Some(
                categories
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.as_str(), i))
                    .collect(),
            ),
            _ => None,
        })
        .collect();

    let mut values = Vec::new();
    let mut targets = Vec::new();
    let mut n = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (col, lookup) in features.iter().zip(&lookups) {
            let cell = record.get(position[col.name.as_str()]).unwrap_or("");
            if cell.is_empty() {
                return Err(PieError::MissingValue {
                    row,
                    column: col.name.clone(),
                });
            }
            let v = match lookup {
                Some(map) => *map.get(cell).ok_or_else(|| PieError::UnknownCategory {
                    row,
                    column: col.name.clone(),
                    value: cell.to_string(),
                })? as f64,
                None => parse_number(cell, row, &col.name)?,
            };
            values.push(v);
        }
        if has_target {
            let cell = record.get(position[target.name.as_str()]).unwrap_or("");
            if cell.is_empty() {
                return Err(PieError::MissingValue {
                    row,
                    column: target.name.clone(),
                });
            }
            targets.push(parse_number(cell, row, &target.name)?);
        }
        n += 1;
    }

    let x = Array2::from_shape_vec((n, features.len()), values)
        .map_err(|e| PieError::InvalidData(e.to_string()))?;
    let columns = features
        .iter()
        .enumerate()
        .map(|(group, c)| Column {
            name: c.name.clone(),
            group,
            kind: match &c.kind {
                SchemaKind::Categorical { categories } => ColumnKind::Categorical {
                    categories: categories.clone(),
                },
                _ => ColumnKind::Numeric,
            },
        })
        .collect();
    let names = features.iter().map(|c| c.name.clone()).collect();
    Dataset::new(
        x,
        has_target.then(|| Array1::from(targets)),
        columns,
        names,
        Some(target.name.clone()),
    )
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(PieError::NotNumeric {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

/// Expands every categorical column with `m` categories into `m` indicator
/// columns named `feature=category`, all sharing the feature's group.
pub fn one_hot_encode(ds: &Dataset) -> Dataset {
    if ds.is_encoded() {
        return ds.clone();
    }
    let n = ds.n_rows();
    let mut blocks: Vec<Array1<f64>> = Vec::new();
    let mut columns = Vec::new();
    for (idx, col) in ds.columns.iter().enumerate() {
        match &col.kind {
            ColumnKind::Categorical { categories } => {
                for (code, category) in categories.iter().enumerate() {
                    let indicator = ds
                        .x
                        .column(idx)
                        .mapv(|v| if v as usize == code { 1.0 } else { 0.0 });
                    blocks.push(indicator);
                    columns.push(Column {
                        name: format!("{}={}", col.name, category),
                        group: col.group,
                        kind: ColumnKind::Indicator {
                            category: category.clone(),
                        },
                    });
                }
            }
            _ => {
                blocks.push(ds.x.column(idx).to_owned());
                columns.push(col.clone());
            }
        }
    }
    let mut x = Array2::zeros((n, blocks.len()));
    for (j, block) in blocks.iter().enumerate() {
        x.column_mut(j).assign(block);
    }
    Dataset {
        x,
        y: ds.y.clone(),
        columns,
        feature_names: ds.feature_names.clone(),
        target_name: ds.target_name.clone(),
        warnings: ds.warnings.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledColumn {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Training-split statistics of the numeric columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalerParams {
    pub scaled: Vec<ScaledColumn>,
    /// Constant numeric columns removed from the design.
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

impl ScalerParams {
    /// Fits means and population standard deviations on `train`.
    pub fn fit(train: &Dataset) -> ScalerParams {
        let n = train.n_rows() as f64;
        let mut params = ScalerParams::default();
        for (idx, col) in train.columns.iter().enumerate() {
            if col.kind != ColumnKind::Numeric {
                continue;
            }
            let values = train.x.column(idx);
            let mean = values.sum() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 1e-12 * mean.abs().max(1.0) {
                params.dropped.push(col.name.clone());
                params
                    .warnings
                    .push(format!("dropped constant column {:?}", col.name));
            } else {
                params.scaled.push(ScaledColumn {
                    name: col.name.clone(),
                    mean,
                    std,
                });
            }
        }
        params
    }

    /// Scales numeric columns and drops the constant ones. `ds` must carry
    /// the same columns the parameters were fitted on.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let names: HashMap<&str, usize> = ds
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.as_str(), i))
            .collect();
        let missing: Vec<String> = self
            .scaled
            .iter()
            .map(|s| &s.name)
            .chain(&self.dropped)
            .filter(|name| !names.contains_key(name.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(PieError::ColumnMismatch {
                missing,
                extra: Vec::new(),
            });
        }
        let mut out = ds.clone();
        for s in &self.scaled {
            let idx = names[s.name.as_str()];
            out.x
                .column_mut(idx)
                .mapv_inplace(|v| (v - s.mean) / s.std);
        }
        let drop: BTreeSet<usize> = self.dropped.iter().map(|d| names[d.as_str()]).collect();
        let mut out = if drop.is_empty() {
            out
        } else {
            out.drop_columns(&drop)
        };
        out.warnings.extend(self.warnings.iter().cloned());
        Ok(out)
    }
}

/// Fits scaling on `train` and applies it to `apply_to`.
pub fn standardize(train: &Dataset, apply_to: &Dataset) -> Result<(Dataset, ScalerParams)> {
    let params = ScalerParams::fit(train);
    let scaled = params.apply(apply_to)?;
    Ok((scaled, params))
}

/// Schema and scaler needed to turn a raw CSV into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub schema: Vec<ColumnSchema>,
    pub scaler: ScalerParams,
}

impl Preprocessing {
    /// Encodes and scales a freshly loaded dataset.
    pub fn transform(&self, raw: &Dataset) -> Result<Dataset> {
        self.scaler.apply(&one_hot_encode(raw))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Partitions `0..n` into `k` shuffled folds; the first `n % k` folds get
/// one extra row. Train and test index lists are sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(PieError::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(PieError::InvalidArgument(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let idx = shuffled_indices(n, seed);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = idx[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = idx[..start]
            .iter()
            .chain(&idx[start + size..])
            .copied()
            .collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Shuffled train/holdout split with `round(n * fraction)` holdout rows
/// (at least one row on each side).
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<Fold> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PieError::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if n < 2 {
        return Err(PieError::InvalidArgument("need at least 2 rows to split".into()));
    }
    let size = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let idx = shuffled_indices(n, seed);
    let mut test = idx[..size].to_vec();
    let mut train = idx[size..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Fold { train, test })
}
