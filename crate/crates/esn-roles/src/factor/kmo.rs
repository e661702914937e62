//! Sampling adequacy from the ratio of correlations to partial correlations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CorrelationMatrix, FactorError};

/// Kaiser-Meyer-Olkin measure, overall and per variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingAdequacy {
    pub overall: f64,
    /// Per-variable measure, same order as the correlation labels.
    pub per_variable: Vec<f64>,
    /// Variables whose squared correlation and partial sums were both zero,
    /// making the ratio undefined; reported as 0.
    pub degenerate: Vec<String>,
}

/// Anti-image partial correlations from the inverse correlation matrix:
/// q_ij = -t_ij / sqrt(t_ii * t_jj) with T the inverse.
fn partial_correlations(inverse: &DMatrix<f64>) -> DMatrix<f64> {
    let p = inverse.nrows();
    let mut q = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                q[(i, j)] = -inverse[(i, j)] / (inverse[(i, i)] * inverse[(j, j)]).sqrt();
            }
        }
    }
    q
}

/// The adequacy measure compares squared off-diagonal correlations with the
/// squared partials that remain after removing the other variables. Values
/// near 1 mean the correlations are mostly shared structure.
pub fn sampling_adequacy(corr: &CorrelationMatrix) -> Result<SamplingAdequacy, FactorError> {
    let p = corr.order();
    let inverse = corr
        .values
        .clone()
        .try_inverse()
        .ok_or(FactorError::SingularCorrelation)?;
    let q = partial_correlations(&inverse);

    let mut degenerate = Vec::new();
    let ratio = |r2: f64, q2: f64| if r2 + q2 == 0.0 { None } else { Some(r2 / (r2 + q2)) };

    let mut r2_total = 0.0;
    let mut q2_total = 0.0;
    let mut per_variable = Vec::with_capacity(p);
    for i in 0..p {
        let mut r2 = 0.0;
        let mut q2 = 0.0;
        for j in 0..p {
            if i != j {
                r2 += corr.values[(i, j)].powi(2);
                q2 += q[(i, j)].powi(2);
            }
        }
        r2_total += r2;
        q2_total += q2;
        match ratio(r2, q2) {
            Some(v) => per_variable.push(v),
            None => {
                degenerate.push(corr.labels[i].clone());
                per_variable.push(0.0);
            }
        }
    }
    let overall = match ratio(r2_total, q2_total) {
        Some(v) => v,
        None => {
            degenerate.push("overall".into());
            0.0
        }
    };
    Ok(SamplingAdequacy {
        overall,
        per_variable,
        degenerate,
    })
}
