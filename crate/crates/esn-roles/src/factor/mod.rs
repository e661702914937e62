//! Latent-dimension extraction from the per-user metric matrix.
//!
//! The stage runs correlation, a sampling-adequacy check, eigenvalue-based
//! factor-count selection, principal axis factoring with a low-communality
//! exclusion pass, oblique rotation, factor assignment, and per-user scores.

mod correlation;
mod eigen;
mod kmo;
mod paf;
mod rotation;
mod scores;

pub use correlation::{correlation_matrix, standardize, CorrelationMatrix, DataSet};
pub use eigen::{sorted_symmetric_eigen, SortedEigen};
pub use kmo::{sampling_adequacy, SamplingAdequacy};
pub use paf::{
    exclude_and_refit, initial_communalities, kaiser_retention, paf_extract,
    variance_explained, FactorModel, HeywoodPolicy, PafOptions, Refit, RetentionDecision,
    VarianceExplained,
};
pub use rotation::{
    assign_factors, kaiser_row_normalize, kaiser_row_restore, oblimin_criterion,
    oblimin_rotate, rotate_loadings, FactorAssignment, RotationOptions, RotationResult,
};
pub use scores::{factor_scores, regression_scores, ScoreMatrix};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricId, MetricMatrix};

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("data shape problem: {detail}")]
    Shape { detail: String },
    #[error("need at least 3 cases to correlate, got {cases}")]
    TooFewCases { cases: usize },
    #[error("correlation matrix is singular; exclude collinear or constant variables and rerun")]
    SingularCorrelation,
    #[error("no eigenvalue of the correlation matrix exceeds 1, nothing to extract")]
    NothingRetained,
    #[error("communality of {variable} exceeded 1 at iteration {iteration}")]
    Heywood { variable: String, iteration: usize },
    #[error("exclusions leave {remaining} variables for {factors} factors; need more variables than factors")]
    TooFewVariables { remaining: usize, factors: usize },
    #[error("variable {label} has zero variance")]
    ZeroVariance { label: String },
    #[error("every variable has zero variance, nothing to correlate")]
    AllZeroVariance,
}

/// Serializes matrices as row-major nested arrays so reports stay readable.
pub(crate) mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

/// View of the metric matrix as a labelled data set.
pub fn metric_dataset(matrix: &MetricMatrix) -> DataSet {
    DataSet::new(
        MetricId::ALL.iter().map(|m| m.label().to_string()).collect(),
        matrix.values.clone(),
    )
    .expect("metric matrix always has one label per column")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub paf: PafOptions,
    pub rotation: RotationOptions,
    /// Variables whose extracted communality falls below this are dropped
    /// and the extraction repeated once.
    pub communality_floor: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            paf: PafOptions::default(),
            rotation: RotationOptions::default(),
            communality_floor: 0.2,
        }
    }
}

/// One extraction pass: the correlation it ran on, the retention decision,
/// the variance table over all eigenvalues, and the fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorPass {
    pub correlation: CorrelationMatrix,
    pub retention: RetentionDecision,
    pub variance: VarianceExplained,
    pub model: FactorModel,
}

/// Everything the factor stage produces, serialized into the report
/// artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorAnalysis {
    pub sampling_adequacy: Option<SamplingAdequacy>,
    /// Constant columns removed before any factoring.
    pub dropped_zero_variance: Vec<String>,
    pub first_pass: FactorPass,
    /// Variables removed by the communality floor after the first pass.
    pub excluded_low_communality: Vec<String>,
    pub second_pass: Option<FactorPass>,
    pub rotation: RotationResult,
    pub assignments: Vec<FactorAssignment>,
    pub warnings: Vec<String>,
}

impl FactorAnalysis {
    /// The pass whose model fed rotation and scoring.
    pub fn final_pass(&self) -> &FactorPass {
        self.second_pass.as_ref().unwrap_or(&self.first_pass)
    }
}

/// Runs the full factor stage over a data set.
///
/// A failed sampling-adequacy computation degrades to a warning because
/// extraction has its own fallback for a singular correlation matrix; every
/// other failure is fatal to the stage.
pub fn analyze(data: &DataSet, options: &AnalysisOptions) -> Result<FactorAnalysis, FactorError> {
    let mut warnings = Vec::new();
    let full = correlation_matrix(data)?;
    let dropped_zero_variance = full.zero_variance.clone();
    let working = if dropped_zero_variance.is_empty() {
        full
    } else {
        warnings.push(format!(
            "zero-variance columns removed before factoring: {}",
            dropped_zero_variance.join(", ")
        ));
        full.drop_variables(&dropped_zero_variance)?
    };

    let sampling = match sampling_adequacy(&working) {
        Ok(s) => {
            if !s.degenerate.is_empty() {
                warnings.push(format!(
                    "sampling adequacy undefined (no correlations) for: {}",
                    s.degenerate.join(", ")
                ));
            }
            Some(s)
        }
        Err(e) => {
            warnings.push(format!("sampling adequacy unavailable: {e}"));
            None
        }
    };

    let retention = kaiser_retention(&working)?;
    let variance = variance_explained(&retention.eigenvalues, working.order());
    let model = paf_extract(&working, retention.retained, &options.paf)?;
    let first_pass = FactorPass {
        correlation: working.clone(),
        retention,
        variance,
        model,
    };

    let refit = exclude_and_refit(
        &working,
        &first_pass.model,
        options.communality_floor,
        &options.paf,
    )?;
    let (excluded, second_pass) = match refit {
        Some(r) => {
            let variance = variance_explained(&r.retention.eigenvalues, r.correlation.order());
            (
                r.excluded,
                Some(FactorPass {
                    correlation: r.correlation,
                    retention: r.retention,
                    variance,
                    model: r.model,
                }),
            )
        }
        None => (Vec::new(), None),
    };

    let final_model = second_pass
        .as_ref()
        .map(|p| &p.model)
        .unwrap_or(&first_pass.model);
    if final_model.smc_fallback {
        warnings.push(
            "initial communalities fell back to largest correlations (singular matrix)".into(),
        );
    }
    if !final_model.heywood.is_empty() {
        warnings.push(format!(
            "communalities capped at 1 for: {}",
            final_model.heywood.join(", ")
        ));
    }
    if !final_model.converged {
        warnings.push(format!(
            "extraction stopped at the iteration cap ({})",
            final_model.iterations
        ));
    }

    let rotation = oblimin_rotate(final_model, &options.rotation)?;
    if !rotation.converged {
        warnings.push(format!(
            "rotation stopped before the gradient threshold after {} steps",
            rotation.iterations
        ));
    }
    let assignments = assign_factors(&rotation.pattern, &final_model.labels);

    Ok(FactorAnalysis {
        sampling_adequacy: sampling,
        dropped_zero_variance,
        first_pass,
        excluded_low_communality: excluded,
        second_pass,
        rotation,
        assignments,
        warnings,
    })
}
