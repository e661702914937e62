//! Per-case factor scores by the regression method.

use nalgebra::DMatrix;

use super::correlation::{column_means, column_sds, DataSet};
use super::rotation::RotationResult;
use super::{CorrelationMatrix, FactorError};
use crate::ids::UserId;
use crate::metrics::MetricMatrix;

/// Cases-by-factors score matrix with the user each row belongs to.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub users: Vec<UserId>,
    pub values: DMatrix<f64>,
}

/// Regression scores: standardize the included columns, then Z times
/// corr-inverse times structure. Score columns inherit mean zero from Z.
///
/// The data set may carry more columns than the correlation matrix; columns
/// are matched by label so a post-exclusion model scores against exactly its
/// own variables.
pub fn regression_scores(
    data: &DataSet,
    corr: &CorrelationMatrix,
    rotation: &RotationResult,
) -> Result<DMatrix<f64>, FactorError> {
    let column_of = |label: &String| -> Result<usize, FactorError> {
        data.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| FactorError::Shape {
                detail: format!("variable {label} missing from the data set"),
            })
    };
    let picked: Vec<usize> = corr
        .labels
        .iter()
        .map(column_of)
        .collect::<Result<_, _>>()?;
    if rotation.structure.nrows() != picked.len() {
        return Err(FactorError::Shape {
            detail: format!(
                "rotation covers {} variables, correlation {}",
                rotation.structure.nrows(),
                picked.len()
            ),
        });
    }

    let n = data.n_cases();
    let restricted = DMatrix::from_fn(n, picked.len(), |i, j| data.values[(i, picked[j])]);
    let means = column_means(&restricted);
    let sds = column_sds(&restricted, &means);
    for (j, &col) in picked.iter().enumerate() {
        if sds[j] == 0.0 || super::correlation::is_constant_column(&restricted, j) {
            return Err(FactorError::ZeroVariance {
                label: data.labels[col].clone(),
            });
        }
    }
    let z = DMatrix::from_fn(n, picked.len(), |i, j| {
        (restricted[(i, j)] - means[j]) / sds[j]
    });
    let inverse = corr
        .values
        .clone()
        .try_inverse()
        .ok_or(FactorError::SingularCorrelation)?;
    Ok(z * inverse * &rotation.structure)
}

/// Scores for a metric matrix, keeping row-to-user pairing.
pub fn factor_scores(
    matrix: &MetricMatrix,
    corr: &CorrelationMatrix,
    rotation: &RotationResult,
) -> Result<ScoreMatrix, FactorError> {
    let data = DataSet::new(
        crate::metrics::MetricId::ALL
            .iter()
            .map(|m| m.label().to_string())
            .collect(),
        matrix.values.clone(),
    )?;
    let values = regression_scores(&data, corr, rotation)?;
    Ok(ScoreMatrix {
        users: matrix.users.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::correlation::correlation_matrix;
    use crate::factor::rotation::{rotate_loadings, RotationOptions};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labelled(values: DMatrix<f64>) -> DataSet {
        let p = values.ncols();
        DataSet::new((0..p).map(|j| format!("v{j}")).collect(), values).unwrap()
    }

    #[test]
    fn single_variable_scores_follow_that_column() {
        let data = labelled(DMatrix::from_column_slice(
            5,
            1,
            &[1.0, 4.0, 2.0, 8.0, 5.0],
        ));
        let corr = CorrelationMatrix {
            labels: vec!["v0".into()],
            values: DMatrix::identity(1, 1),
            zero_variance: vec![],
        };
        let rotation =
            rotate_loadings(&DMatrix::from_element(1, 1, 0.8), &RotationOptions::default())
                .unwrap();
        let scores = regression_scores(&data, &corr, &rotation).unwrap();
        // Proportional to the standardized column with slope 0.8.
        let means = column_means(&data.values);
        let sds = column_sds(&data.values, &means);
        for i in 0..5 {
            let z = (data.values[(i, 0)] - means[0]) / sds[0];
            assert_abs_diff_eq!(scores[(i, 0)], 0.8 * z, epsilon = 1e-12);
        }
    }

    #[test]
    fn score_columns_are_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = labelled(DMatrix::from_fn(40, 5, |_, _| rng.gen_range(-3.0..3.0)));
        let corr = correlation_matrix(&data).unwrap();
        let loadings = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-0.8..0.8));
        let rotation = rotate_loadings(&loadings, &RotationOptions::default()).unwrap();
        let scores = regression_scores(&data, &corr, &rotation).unwrap();
        for k in 0..2 {
            let mean = scores.column(k).sum() / 40.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn matches_direct_elementwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let data = labelled(DMatrix::from_fn(50, 5, |_, _| rng.gen_range(0.0..10.0)));
        let corr = correlation_matrix(&data).unwrap();
        let loadings = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-0.7..0.7));
        let rotation = rotate_loadings(&loadings, &RotationOptions::default()).unwrap();
        let scores = regression_scores(&data, &corr, &rotation).unwrap();

        // Same quantity assembled with explicit loops instead of matrix ops.
        let means = column_means(&data.values);
        let sds = column_sds(&data.values, &means);
        let inv = corr.values.clone().try_inverse().unwrap();
        for i in 0..50 {
            for k in 0..2 {
                let mut total = 0.0;
                for a in 0..5 {
                    let z = (data.values[(i, a)] - means[a]) / sds[a];
                    for b in 0..5 {
                        total += z * inv[(a, b)] * rotation.structure[(b, k)];
                    }
                }
                assert_abs_diff_eq!(scores[(i, k)], total, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn scoring_respects_excluded_variables() {
        // Correlation over a subset of columns: scores use only those.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data = labelled(DMatrix::from_fn(30, 4, |_, _| rng.gen_range(-1.0..1.0)));
        let subset = DataSet::new(
            vec!["v0".into(), "v2".into()],
            DMatrix::from_fn(30, 2, |i, j| data.values[(i, [0, 2][j])]),
        )
        .unwrap();
        let corr = correlation_matrix(&subset).unwrap();
        let loadings = DMatrix::from_fn(2, 1, |_, _| rng.gen_range(0.3..0.8));
        let rotation = rotate_loadings(&loadings, &RotationOptions::default()).unwrap();
        let direct = regression_scores(&subset, &corr, &rotation).unwrap();
        let via_full = regression_scores(&data, &corr, &rotation).unwrap();
        assert!((direct - via_full).abs().max() < 1e-12);
    }

    #[test]
    fn constant_column_is_rejected() {
        let data = labelled(DMatrix::from_fn(6, 2, |i, j| {
            if j == 0 {
                i as f64
            } else {
                5.0
            }
        }));
        let corr = CorrelationMatrix {
            labels: vec!["v0".into(), "v1".into()],
            values: DMatrix::identity(2, 2),
            zero_variance: vec![],
        };
        let rotation = rotate_loadings(
            &DMatrix::from_column_slice(2, 1, &[0.5, 0.5]),
            &RotationOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            regression_scores(&data, &corr, &rotation),
            Err(FactorError::ZeroVariance { .. })
        ));
    }
}
