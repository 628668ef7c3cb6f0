//! CSV ingestion, train/test splitting and normalization.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::linalg::Matrix;

/// Affine maps fitted on the training split: inputs to `[0, 1]` by min–max
/// scaling, targets to zero mean and unit (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_min: Vec<f64>,
    /// `max − min` per input; zero for constant columns, which map to 0.
    pub x_range: Vec<f64>,
    pub y_mean: f64,
    /// One when the training targets are constant.
    pub y_std: f64,
}

impl Normalization {
    /// Fits on raw training rows. With `scale_inputs == false` the input map
    /// is the identity.
    pub fn fit(x: &Matrix<f64>, y: &[f64], scale_inputs: bool) -> Self {
        let d = x.cols();
        let (x_min, x_range) = if scale_inputs {
            (0..d)
                .map(|j| {
                    let col = x.column(j);
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                })
                .unzip()
        } else {
            (vec![0.0; d], vec![1.0; d])
        };
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { x_min, x_range, y_mean, y_std }
    }

    pub fn transform_x(&self, x: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| if self.x_range[j] > 0.0 { (x[(i, j)] - self.x_min[j]) / self.x_range[j] } else { 0.0 })
    }

    /// Inverse of [`transform_x`](Self::transform_x); constant columns map
    /// back to their value.
    pub fn inverse_x(&self, x: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] * self.x_range[j] + self.x_min[j])
    }

    pub fn transform_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.y_mean) / self.y_std).collect()
    }

    pub fn inverse_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.y_std + self.y_mean).collect()
    }

    /// Predictive variances back in raw target units.
    pub fn inverse_variance(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|v| v * self.y_std * self.y_std).collect()
    }

    pub fn apply(&self, data: &Dataset<f64>) -> Result<Dataset<f64>> {
        Dataset::new(self.transform_x(data.x()), self.transform_y(data.y()))
    }
}

/// Normalized train split, the remaining rows as test pool, and the map.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Dataset<f64>,
    /// `None` when every row went to training.
    pub test: Option<Dataset<f64>>,
    pub normalization: Normalization,
    /// Raw row indices of the training split, ascending.
    pub train_rows: Vec<usize>,
    pub columns: Vec<String>,
    pub target: String,
}

/// Raw numeric table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let columns: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = record
            .iter()
            .zip(&columns)
            .map(|(cell, col)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Data(format!("{}: row {}, column {col:?}: {cell:?} is not a finite number", path.display(), r + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    if columns.len() < 2 {
        return Err(Error::Data(format!("{}: need at least one input and one target column", path.display())));
    }
    Ok(Table { columns, rows })
}

/// Reads a CSV with a header row and splits it with [`split_table`].
pub fn load_dataset<R: Rng + ?Sized>(path: &Path, target: Option<&str>, train_size: usize, rng: &mut R) -> Result<SplitData> {
    split_table(&read_csv(path)?, target, train_size, rng)
}

/// Draws a uniform training subset of `train_size` rows; the rest form the
/// test pool. The target is the named column or else the last one.
pub fn split_table<R: Rng + ?Sized>(table: &Table, target: Option<&str>, train_size: usize, rng: &mut R) -> Result<SplitData> {
    let t = match target {
        Some(name) => table.columns.iter().position(|c| c == name).ok_or_else(|| Error::Data(format!("no target column {name:?} in {:?}", table.columns)))?,
        None => table.columns.len() - 1,
    };
    let n = table.rows.len();
    if train_size == 0 || train_size > n {
        return Err(Error::Data(format!("train size {train_size} must be between 1 and the row count {n}")));
    }
    let mut train_rows = sample(rng, n, train_size).into_vec();
    train_rows.sort_unstable();
    let mut is_train = vec![false; n];
    for &i in &train_rows {
        is_train[i] = true;
    }
    let test_rows: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();
    let inputs: Vec<usize> = (0..table.columns.len()).filter(|&j| j != t).collect();
    let build = |rows: &[usize]| -> (Matrix<f64>, Vec<f64>) {
        let x = Matrix::from_fn(rows.len(), inputs.len(), |i, j| table.rows[rows[i]][inputs[j]]);
        (x, rows.iter().map(|&i| table.rows[i][t]).collect())
    };
    let (x_train, y_train) = build(&train_rows);
    let normalization = Normalization::fit(&x_train, &y_train, true);
    let train = normalization.apply(&Dataset::new(x_train, y_train)?)?;
    let test = if test_rows.is_empty() {
        None
    } else {
        let (x, y) = build(&test_rows);
        Some(normalization.apply(&Dataset::new(x, y)?)?)
    };
    Ok(SplitData {
        train,
        test,
        normalization,
        train_rows,
        columns: inputs.iter().map(|&j| table.columns[j].clone()).collect(),
        target: table.columns[t].clone(),
    })
}
