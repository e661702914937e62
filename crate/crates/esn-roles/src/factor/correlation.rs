//! Pearson correlation over the observation matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FactorError;

/// A labelled observations-by-variables matrix, rows are cases.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
}

impl DataSet {
    pub fn new(labels: Vec<String>, values: DMatrix<f64>) -> Result<Self, FactorError> {
        if labels.len() != values.ncols() {
            return Err(FactorError::Shape {
                detail: format!(
                    "{} labels for {} columns",
                    labels.len(),
                    values.ncols()
                ),
            });
        }
        Ok(Self { labels, values })
    }

    pub fn n_cases(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_variables(&self) -> usize {
        self.values.ncols()
    }
}

/// Correlation matrix with bookkeeping about degenerate columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    #[serde(with = "super::serde_matrix")]
    pub values: DMatrix<f64>,
    /// Labels of columns whose sample variance was zero. Their correlation
    /// entries are 0 off the diagonal and 1 on it.
    pub zero_variance: Vec<String>,
}

impl CorrelationMatrix {
    pub fn order(&self) -> usize {
        self.values.nrows()
    }

    /// Removes the named variables, keeping the rest in original order.
    pub fn drop_variables(&self, names: &[String]) -> Result<Self, FactorError> {
        let keep: Vec<usize> = (0..self.labels.len())
            .filter(|&i| !names.contains(&self.labels[i]))
            .collect();
        if keep.is_empty() {
            return Err(FactorError::Shape {
                detail: "dropping every variable leaves nothing to factor".into(),
            });
        }
        let p = keep.len();
        let mut values = DMatrix::zeros(p, p);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                values[(a, b)] = self.values[(i, j)];
            }
        }
        let labels: Vec<String> = keep.iter().map(|&i| self.labels[i].clone()).collect();
        let zero_variance = self
            .zero_variance
            .iter()
            .filter(|z| labels.contains(z))
            .cloned()
            .collect();
        Ok(Self {
            labels,
            values,
            zero_variance,
        })
    }
}

/// Column means of the data matrix.
pub fn column_means(values: &DMatrix<f64>) -> DVector<f64> {
    let n = values.nrows() as f64;
    DVector::from_iterator(
        values.ncols(),
        values.column_iter().map(|c| c.sum() / n),
    )
}

/// Column standard deviations with the n-1 denominator.
pub fn column_sds(values: &DMatrix<f64>, means: &DVector<f64>) -> DVector<f64> {
    let n = values.nrows() as f64;
    DVector::from_iterator(
        values.ncols(),
        values.column_iter().enumerate().map(|(j, c)| {
            let ss: f64 = c.iter().map(|v| (v - means[j]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        }),
    )
}

/// A column every entry of which equals the first. Checked by equality
/// rather than a variance threshold: subtracting the column mean from a
/// constant column leaves rounding residue, so a computed variance of a
/// truly constant column need not be exactly zero.
pub(crate) fn is_constant_column(values: &DMatrix<f64>, j: usize) -> bool {
    let col = values.column(j);
    col.iter().all(|&v| v == col[0])
}

/// Standardizes columns to mean 0, sd 1. Zero-variance columns become all
/// zeros and are reported by index.
pub fn standardize(values: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let means = column_means(values);
    let sds = column_sds(values, &means);
    let mut out = values.clone();
    let mut degenerate = Vec::new();
    for j in 0..out.ncols() {
        if sds[j] == 0.0 || is_constant_column(values, j) {
            degenerate.push(j);
            out.column_mut(j).fill(0.0);
        } else {
            for i in 0..out.nrows() {
                out[(i, j)] = (values[(i, j)] - means[j]) / sds[j];
            }
        }
    }
    (out, degenerate)
}

/// Pearson correlation of the data set columns.
///
/// Needs at least 3 cases; correlation from 2 points is always +-1 and
/// carries no information about association strength. Entries are clamped
/// to [-1, 1] to absorb last-bit float excursions.
pub fn correlation_matrix(data: &DataSet) -> Result<CorrelationMatrix, FactorError> {
    let n = data.n_cases();
    if n < 3 {
        return Err(FactorError::TooFewCases { cases: n });
    }
    let (z, degenerate) = standardize(&data.values);
    let p = data.n_variables();
    let mut values = DMatrix::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let mut s = 0.0;
            for k in 0..n {
                s += z[(k, i)] * z[(k, j)];
            }
            let r = (s / (n as f64 - 1.0)).clamp(-1.0, 1.0);
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    let zero_variance: Vec<String> = degenerate
        .into_iter()
        .map(|j| data.labels[j].clone())
        .collect();
    if zero_variance.len() == p {
        return Err(FactorError::AllZeroVariance);
    }
    Ok(CorrelationMatrix {
        labels: data.labels.clone(),
        values,
        zero_variance,
    })
}
