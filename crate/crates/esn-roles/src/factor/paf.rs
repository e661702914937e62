//! Principal axis factoring by iterated eigendecomposition of the reduced
//! correlation matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::eigen::sorted_symmetric_eigen;
use super::{CorrelationMatrix, FactorError};

/// What to do when an iterated communality exceeds 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeywoodPolicy {
    /// Cap the offending communality at 1 and record the variable.
    #[default]
    Clamp,
    /// Abort extraction.
    Fail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PafOptions {
    /// Stop once the largest absolute communality change falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub heywood: HeywoodPolicy,
}

impl Default for PafOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 100,
            heywood: HeywoodPolicy::Clamp,
        }
    }
}

/// How many factors to keep and why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetentionDecision {
    /// Eigenvalues of the unreduced correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// Count of eigenvalues strictly above 1.
    pub retained: usize,
    /// Percent of total variance per retained factor, 100 * lambda / p.
    pub variance_percent: Vec<f64>,
}

/// Eigenvalue-above-1 rule on the unreduced correlation matrix. An
/// eigenvalue of exactly 1 carries no more variance than a single
/// standardized variable, so only strictly larger ones count.
pub fn kaiser_retention(corr: &CorrelationMatrix) -> Result<RetentionDecision, FactorError> {
    let p = corr.order() as f64;
    let eig = sorted_symmetric_eigen(&corr.values);
    let eigenvalues: Vec<f64> = eig.values.iter().copied().collect();
    let retained = eigenvalues.iter().filter(|&&v| v > 1.0).count();
    if retained == 0 {
        return Err(FactorError::NothingRetained);
    }
    let variance_percent = eigenvalues[..retained]
        .iter()
        .map(|v| 100.0 * v / p)
        .collect();
    Ok(RetentionDecision {
        eigenvalues,
        retained,
        variance_percent,
    })
}

/// Per-factor and cumulative percentages of total variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceExplained {
    pub percent: Vec<f64>,
    pub cumulative_percent: Vec<f64>,
}

/// Converts eigenvalues (descending) to variance percentages out of the p
/// units of standardized total variance.
pub fn variance_explained(eigenvalues: &[f64], p: usize) -> VarianceExplained {
    let mut cumulative = 0.0;
    let mut percent = Vec::with_capacity(eigenvalues.len());
    let mut cumulative_percent = Vec::with_capacity(eigenvalues.len());
    for &v in eigenvalues {
        let share = 100.0 * v / p as f64;
        cumulative += share;
        percent.push(share);
        cumulative_percent.push(cumulative);
    }
    VarianceExplained {
        percent,
        cumulative_percent,
    }
}

/// Squared multiple correlations as start values: 1 - 1/diag(inverse).
/// Falls back to each variable's largest absolute correlation when the
/// matrix cannot be inverted; the flag records which route was taken.
pub fn initial_communalities(corr: &CorrelationMatrix) -> (Vec<f64>, bool) {
    let p = corr.order();
    if let Some(inv) = corr.values.clone().try_inverse() {
        let ok = (0..p).all(|i| inv[(i, i)].is_finite() && inv[(i, i)] > 0.0);
        if ok {
            let smc = (0..p)
                .map(|i| (1.0 - 1.0 / inv[(i, i)]).clamp(0.0, 1.0))
                .collect();
            return (smc, false);
        }
    }
    let fallback = (0..p)
        .map(|i| {
            (0..p)
                .filter(|&j| j != i)
                .map(|j| corr.values[(i, j)].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    (fallback, true)
}

/// Result of the iterated extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorModel {
    pub labels: Vec<String>,
    pub retained: usize,
    /// Eigenvalues of the unreduced correlation matrix, descending.
    pub unreduced_eigenvalues: Vec<f64>,
    /// p x m unrotated loadings; each column's largest-magnitude entry is
    /// positive.
    #[serde(with = "super::serde_matrix")]
    pub loadings: DMatrix<f64>,
    pub initial_communalities: Vec<f64>,
    pub communalities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute communality change at each iteration.
    pub delta_trace: Vec<f64>,
    /// Largest absolute off-diagonal entry of corr minus the loading
    /// reproduction, per iteration. Settles rather than climbs once the
    /// iteration approaches its fixed point.
    pub residual_trace: Vec<f64>,
    /// Variables whose communality was capped at 1 at least once.
    pub heywood: Vec<String>,
    /// True when start values came from the largest-correlation fallback.
    pub smc_fallback: bool,
    /// Percent of variance per factor from the unreduced eigenvalues.
    pub initial_variance_percent: Vec<f64>,
    /// Percent of variance per factor from the final loading column sums of
    /// squares, 100 * SS / p.
    pub extraction_variance_percent: Vec<f64>,
}

impl FactorModel {
    pub fn n_variables(&self) -> usize {
        self.labels.len()
    }

    /// Labels whose extracted communality is below the floor.
    pub fn low_communality(&self, floor: f64) -> Vec<String> {
        self.labels
            .iter()
            .zip(&self.communalities)
            .filter(|(_, &h2)| h2 < floor)
            .map(|(l, _)| l.clone())
            .collect()
    }
}

fn canonical_column_signs(loadings: &mut DMatrix<f64>) {
    for j in 0..loadings.ncols() {
        let col = loadings.column(j);
        let mut lead = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            loadings.column_mut(j).neg_mut();
        }
    }
}

/// Iterates: put current communalities on the diagonal, eigendecompose,
/// rebuild loadings from the top m axes (negative eigenvalues floored at
/// zero), update communalities from loading row sums of squares. Stops when
/// the largest communality change drops below the tolerance.
pub fn paf_extract(
    corr: &CorrelationMatrix,
    m: usize,
    options: &PafOptions,
) -> Result<FactorModel, FactorError> {
    let p = corr.order();
    if m == 0 {
        return Err(FactorError::NothingRetained);
    }
    if m >= p {
        return Err(FactorError::Shape {
            detail: format!("cannot extract {m} factors from {p} variables"),
        });
    }
    let unreduced = sorted_symmetric_eigen(&corr.values);
    let (initial, smc_fallback) = initial_communalities(corr);

    let mut h2 = initial.clone();
    let mut loadings = DMatrix::zeros(p, m);
    let mut delta_trace = Vec::new();
    let mut residual_trace = Vec::new();
    let mut heywood_hit = vec![false; p];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let mut reduced = corr.values.clone();
        for i in 0..p {
            reduced[(i, i)] = h2[i];
        }
        let eig = sorted_symmetric_eigen(&reduced);
        for k in 0..m {
            let scale = eig.values[k].max(0.0).sqrt();
            for i in 0..p {
                loadings[(i, k)] = eig.vectors[(i, k)] * scale;
            }
        }
        let mut residual = 0.0_f64;
        for i in 0..p {
            for j in (i + 1)..p {
                let fit: f64 = (0..m).map(|k| loadings[(i, k)] * loadings[(j, k)]).sum();
                residual = residual.max((corr.values[(i, j)] - fit).abs());
            }
        }
        residual_trace.push(residual);
        let mut delta = 0.0_f64;
        for i in 0..p {
            let mut next: f64 = (0..m).map(|k| loadings[(i, k)].powi(2)).sum();
            if next > 1.0 {
                match options.heywood {
                    HeywoodPolicy::Clamp => {
                        heywood_hit[i] = true;
                        next = 1.0;
                    }
                    HeywoodPolicy::Fail => {
                        return Err(FactorError::Heywood {
                            variable: corr.labels[i].clone(),
                            iteration: iterations,
                        });
                    }
                }
            }
            delta = delta.max((next - h2[i]).abs());
            h2[i] = next;
        }
        delta_trace.push(delta);
        if delta < options.tolerance {
            converged = true;
            break;
        }
    }
    canonical_column_signs(&mut loadings);

    let extraction_variance_percent = (0..m)
        .map(|k| 100.0 * loadings.column(k).iter().map(|v| v * v).sum::<f64>() / p as f64)
        .collect();
    let heywood = (0..p)
        .filter(|&i| heywood_hit[i])
        .map(|i| corr.labels[i].clone())
        .collect();
    Ok(FactorModel {
        labels: corr.labels.clone(),
        retained: m,
        unreduced_eigenvalues: unreduced.values.iter().copied().collect(),
        loadings,
        initial_communalities: initial,
        communalities: h2,
        iterations,
        converged,
        delta_trace,
        residual_trace,
        heywood,
        smc_fallback,
        initial_variance_percent: (0..m)
            .map(|k| 100.0 * unreduced.values[k] / p as f64)
            .collect(),
        extraction_variance_percent,
    })
}

/// Second-pass bookkeeping after dropping weak variables.
#[derive(Debug, Clone)]
pub struct Refit {
    pub excluded: Vec<String>,
    pub correlation: CorrelationMatrix,
    pub retention: RetentionDecision,
    pub model: FactorModel,
}

/// Drops variables whose extracted communality is below the floor and fits
/// again, re-deciding the factor count on the reduced matrix. Returns None
/// when nothing falls below the floor. The reduced problem must keep at
/// least one more variable than factors.
pub fn exclude_and_refit(
    corr: &CorrelationMatrix,
    first: &FactorModel,
    floor: f64,
    options: &PafOptions,
) -> Result<Option<Refit>, FactorError> {
    let excluded = first.low_communality(floor);
    if excluded.is_empty() {
        return Ok(None);
    }
    let reduced = corr.drop_variables(&excluded)?;
    let retention = kaiser_retention(&reduced)?;
    let m = retention.retained;
    if reduced.order() < m + 1 {
        return Err(FactorError::TooFewVariables {
            remaining: reduced.order(),
            factors: m,
        });
    }
    let model = paf_extract(&reduced, m, options)?;
    Ok(Some(Refit {
        excluded,
        correlation: reduced,
        retention,
        model,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn corr_from(rows: &[f64], p: usize) -> CorrelationMatrix {
        CorrelationMatrix {
            labels: (0..p).map(|i| format!("x{i}")).collect(),
            values: DMatrix::from_row_slice(p, p, rows),
            zero_variance: vec![],
        }
    }

    #[test]
    fn two_variable_closed_form() {
        // For [[1, .6], [.6, 1]] with one factor the communality iteration is
        // h_next = (h + 0.6) / 2, fixed point 0.6, so the loading tends to
        // sqrt(0.6). Start value is the squared multiple correlation 0.36.
        let corr = corr_from(&[1.0, 0.6, 0.6, 1.0], 2);
        let options = PafOptions {
            tolerance: 1e-12,
            max_iterations: 200,
            heywood: HeywoodPolicy::Clamp,
        };
        let model = paf_extract(&corr, 1, &options).unwrap();
        assert!(model.converged);
        assert_abs_diff_eq!(model.initial_communalities[0], 0.36, epsilon = 1e-12);
        assert_abs_diff_eq!(model.communalities[0], 0.6, epsilon = 1e-10);
        assert_abs_diff_eq!(model.loadings[(0, 0)], 0.6_f64.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(model.loadings[(1, 0)], 0.6_f64.sqrt(), epsilon = 1e-10);
        // Error halves each iteration, so the change trace decays.
        for w in model.delta_trace.windows(2) {
            assert!(w[1] <= w[0] * 0.5 + 1e-15);
        }
    }

    #[test]
    fn matches_independent_reference() {
        let raw = include_str!("../../tests/fixtures/paf_reference.json");
        let fixture: serde_json::Value = serde_json::from_str(raw).unwrap();
        let rows: Vec<Vec<f64>> = serde_json::from_value(fixture["correlation"].clone()).unwrap();
        let p = rows.len();
        let corr = CorrelationMatrix {
            labels: serde_json::from_value(fixture["labels"].clone()).unwrap(),
            values: DMatrix::from_fn(p, p, |i, j| rows[i][j]),
            zero_variance: vec![],
        };
        let m = fixture["retained"].as_u64().unwrap() as usize;
        let retention = kaiser_retention(&corr).unwrap();
        assert_eq!(retention.retained, m);

        let options = PafOptions {
            tolerance: fixture["tolerance"].as_f64().unwrap(),
            max_iterations: 1000,
            heywood: HeywoodPolicy::Clamp,
        };
        let model = paf_extract(&corr, m, &options).unwrap();
        assert!(model.converged);
        let expected_loadings: Vec<Vec<f64>> =
            serde_json::from_value(fixture["loadings"].clone()).unwrap();
        let expected_h2: Vec<f64> =
            serde_json::from_value(fixture["communalities"].clone()).unwrap();
        for i in 0..p {
            assert_abs_diff_eq!(model.communalities[i], expected_h2[i], epsilon = 1e-4);
            for k in 0..m {
                assert_abs_diff_eq!(
                    model.loadings[(i, k)],
                    expected_loadings[i][k],
                    epsilon = 1e-4
                );
            }
        }
    }

    #[test]
    fn identity_correlation_collapses_in_one_iteration() {
        // Start values are 0, the reduced matrix is all zeros, and nothing
        // changes: converged after a single pass with zero loadings.
        let corr = corr_from(&[1.0, 0.0, 0.0, 1.0], 2);
        let model = paf_extract(&corr, 1, &PafOptions::default()).unwrap();
        assert!(model.converged);
        assert_eq!(model.iterations, 1);
        assert_eq!(model.loadings[(0, 0)], 0.0);
        assert_eq!(model.communalities, vec![0.0, 0.0]);
    }

    #[test]
    fn residual_trace_settles_on_converging_fixture() {
        let corr = corr_from(&[1.0, 0.6, 0.6, 1.0], 2);
        let options = PafOptions {
            tolerance: 1e-10,
            max_iterations: 200,
            heywood: HeywoodPolicy::Clamp,
        };
        let model = paf_extract(&corr, 1, &options).unwrap();
        let tail = &model.residual_trace[model.residual_trace.len().saturating_sub(5)..];
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn variance_percentages_accumulate() {
        let v = variance_explained(&[1.6, 0.4], 2);
        assert_abs_diff_eq!(v.percent[0], 80.0, epsilon = 1e-10);
        assert_abs_diff_eq!(v.cumulative_percent[1], 100.0, epsilon = 1e-10);
        let equal = variance_explained(&[1.0; 4], 4);
        assert!(equal.percent.iter().all(|&s| (s - 25.0).abs() < 1e-12));
    }

    #[test]
    fn communality_overflow_is_clamped_and_flagged() {
        let corr = corr_from(&[1.0, 0.4, 0.9, 0.4, 1.0, 0.7, 0.9, 0.7, 1.0], 3);
        let model = paf_extract(&corr, 1, &PafOptions::default()).unwrap();
        assert!(!model.heywood.is_empty());
        assert!(model.communalities.iter().all(|&h| h <= 1.0));
    }

    #[test]
    fn communality_overflow_can_abort() {
        let corr = corr_from(&[1.0, 0.4, 0.9, 0.4, 1.0, 0.7, 0.9, 0.7, 1.0], 3);
        let options = PafOptions {
            heywood: HeywoodPolicy::Fail,
            ..PafOptions::default()
        };
        assert!(matches!(
            paf_extract(&corr, 1, &options),
            Err(FactorError::Heywood { .. })
        ));
    }

    #[test]
    fn retention_counts_strictly_above_one() {
        // Uncorrelated variables: every eigenvalue is exactly 1, nothing kept.
        let corr = corr_from(&[1.0, 0.0, 0.0, 1.0], 2);
        assert!(matches!(
            kaiser_retention(&corr),
            Err(FactorError::NothingRetained)
        ));
        let corr = corr_from(&[1.0, 0.5, 0.5, 1.0], 2);
        let r = kaiser_retention(&corr).unwrap();
        assert_eq!(r.retained, 1);
        assert_abs_diff_eq!(r.eigenvalues[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.variance_percent[0], 75.0, epsilon = 1e-10);
    }

    #[test]
    fn refit_drops_weak_variables() {
        // x2 correlates with nothing, so its communality stays tiny and the
        // second pass removes it.
        let corr = corr_from(
            &[
                1.0, 0.7, 0.02, 0.7, 1.0, 0.01, 0.02, 0.01, 1.0,
            ],
            3,
        );
        let options = PafOptions {
            tolerance: 1e-8,
            ..PafOptions::default()
        };
        let first = paf_extract(&corr, 1, &options).unwrap();
        let refit = exclude_and_refit(&corr, &first, 0.2, &options)
            .unwrap()
            .expect("weak variable should be excluded");
        assert_eq!(refit.excluded, vec!["x2".to_string()]);
        assert_eq!(refit.model.labels, vec!["x0", "x1"]);
        assert_abs_diff_eq!(refit.model.communalities[0], 0.7, epsilon = 1e-6);
    }

    #[test]
    fn refit_is_noop_when_all_strong() {
        let corr = corr_from(&[1.0, 0.6, 0.6, 1.0], 2);
        let first = paf_extract(&corr, 1, &PafOptions::default()).unwrap();
        assert!(exclude_and_refit(&corr, &first, 0.2, &PafOptions::default())
            .unwrap()
            .is_none());
    }
}
