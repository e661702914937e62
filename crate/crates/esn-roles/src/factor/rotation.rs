//! Oblique rotation by gradient projection on the rotation matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::paf::FactorModel;
use super::FactorError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RotationOptions {
    /// Mixing parameter of the criterion; 0 is the quartimin form.
    pub delta: f64,
    /// Scale loading rows to unit communality before rotating, undo after.
    pub kaiser_normalize: bool,
    pub max_iterations: usize,
    /// Convergence threshold on the projected gradient norm.
    pub tolerance: f64,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self {
            delta: 0.0,
            kaiser_normalize: true,
            max_iterations: 1000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationResult {
    /// p x m pattern loadings.
    #[serde(with = "super::serde_matrix")]
    pub pattern: DMatrix<f64>,
    /// p x m structure correlations, pattern times factor correlations.
    #[serde(with = "super::serde_matrix")]
    pub structure: DMatrix<f64>,
    /// m x m factor correlation matrix, unit diagonal.
    #[serde(with = "super::serde_matrix")]
    pub factor_correlations: DMatrix<f64>,
    /// Criterion value at the start and after each accepted step; never
    /// increases.
    pub criterion_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub delta: f64,
    pub kaiser_normalized: bool,
}

/// The rotation criterion on a pattern matrix: summed cross-products of
/// squared loadings over factor pairs, with a column-sum correction scaled
/// by delta.
pub fn oblimin_criterion(pattern: &DMatrix<f64>, delta: f64) -> f64 {
    let (p, m) = pattern.shape();
    let sq = pattern.map(|v| v * v);
    let mut total = 0.0;
    for j in 0..m {
        for k in (j + 1)..m {
            let cross: f64 = (0..p).map(|i| sq[(i, j)] * sq[(i, k)]).sum();
            let sum_j: f64 = sq.column(j).sum();
            let sum_k: f64 = sq.column(k).sum();
            total += cross - delta / p as f64 * sum_j * sum_k;
        }
    }
    total
}

/// Splits loadings into unit-communality rows and the row scales taken out.
/// Zero rows keep scale 1 so the round trip is exact.
pub fn kaiser_row_normalize(loadings: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (p, m) = loadings.shape();
    let mut weights = vec![1.0; p];
    let mut out = loadings.clone();
    for i in 0..p {
        let h = loadings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if h > 0.0 {
            weights[i] = h;
            for j in 0..m {
                out[(i, j)] /= h;
            }
        }
    }
    (out, weights)
}

/// Inverse of [`kaiser_row_normalize`]: scales each row back up.
pub fn kaiser_row_restore(loadings: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut out = loadings.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[(i, j)] *= weights[i];
        }
    }
    out
}

/// Criterion value and gradient with respect to the pattern matrix. The
/// internal value is half the pairwise form reported in traces; the
/// gradient matches this scaling.
fn criterion_and_gradient(l: &DMatrix<f64>, delta: f64) -> (f64, DMatrix<f64>) {
    let (p, m) = l.shape();
    let sq = l.map(|v| v * v);
    let mut x = DMatrix::zeros(p, m);
    for i in 0..p {
        let row_sum: f64 = (0..m).map(|k| sq[(i, k)]).sum();
        for j in 0..m {
            x[(i, j)] = row_sum - sq[(i, j)];
        }
    }
    if delta != 0.0 {
        for j in 0..m {
            let shift = delta / p as f64 * x.column(j).sum();
            for i in 0..p {
                x[(i, j)] -= shift;
            }
        }
    }
    let f = 0.25 * sq.component_mul(&x).sum();
    let gq = l.component_mul(&x);
    (f, gq)
}

fn unit_columns(mut x: DMatrix<f64>) -> Option<DMatrix<f64>> {
    for j in 0..x.ncols() {
        let norm = x.column(j).norm();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        x.column_mut(j).scale_mut(1.0 / norm);
    }
    Some(x)
}

/// Applies the sign and order conventions in place: every pattern column's
/// largest-magnitude entry positive, columns in descending order of squared
/// structure loadings. Factor correlations are permuted and sign-flipped in
/// step so structure stays pattern times correlations.
fn canonicalize(
    pattern: &mut DMatrix<f64>,
    structure: &mut DMatrix<f64>,
    phi: &mut DMatrix<f64>,
) {
    let (p, m) = pattern.shape();
    for k in 0..m {
        let mut lead = 0;
        for i in 1..p {
            if pattern[(i, k)].abs() > pattern[(lead, k)].abs() {
                lead = i;
            }
        }
        if pattern[(lead, k)] < 0.0 {
            pattern.column_mut(k).neg_mut();
            structure.column_mut(k).neg_mut();
            for r in 0..m {
                phi[(r, k)] = -phi[(r, k)];
            }
            for c in 0..m {
                phi[(k, c)] = -phi[(k, c)];
            }
        }
    }
    let ss: Vec<f64> = (0..m)
        .map(|k| structure.column(k).iter().map(|v| v * v).sum())
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        ss[b].partial_cmp(&ss[a])
            .expect("structure sums of squares are finite")
            .then(a.cmp(&b))
    });
    let old_pattern = pattern.clone();
    let old_structure = structure.clone();
    let old_phi = phi.clone();
    for (dst, &src) in order.iter().enumerate() {
        pattern.set_column(dst, &old_pattern.column(src));
        structure.set_column(dst, &old_structure.column(src));
        for (dst_r, &src_r) in order.iter().enumerate() {
            phi[(dst_r, dst)] = old_phi[(src_r, src)];
        }
    }
}

/// Rotates a loading matrix toward simple structure, allowing correlated
/// factors.
///
/// Works on the rotation matrix T directly: at each step the criterion
/// gradient is projected onto the manifold of unit-length T columns, a step
/// is taken against it with a halving line search that must beat a
/// sufficient-decrease bound, and the loadings are rebuilt through the new
/// T inverse. A single factor has nothing to rotate and returns unchanged.
/// Hitting the iteration cap returns the best iterate with the convergence
/// flag down.
pub fn rotate_loadings(
    loadings: &DMatrix<f64>,
    options: &RotationOptions,
) -> Result<RotationResult, FactorError> {
    let (p, m) = loadings.shape();
    if m == 0 || p == 0 {
        return Err(FactorError::Shape {
            detail: "cannot rotate an empty loading matrix".into(),
        });
    }
    if m == 1 {
        let mut pattern = loadings.clone();
        let mut structure = loadings.clone();
        let mut phi = DMatrix::identity(1, 1);
        canonicalize(&mut pattern, &mut structure, &mut phi);
        return Ok(RotationResult {
            pattern,
            structure,
            factor_correlations: phi,
            criterion_trace: vec![0.0],
            iterations: 0,
            converged: true,
            delta: options.delta,
            kaiser_normalized: options.kaiser_normalize,
        });
    }

    let (a, weights) = if options.kaiser_normalize {
        kaiser_row_normalize(loadings)
    } else {
        (loadings.clone(), vec![1.0; p])
    };

    let mut t = DMatrix::identity(m, m);
    let mut t_inv = DMatrix::identity(m, m);
    let mut l = a.clone();
    let (mut f, mut gq) = criterion_and_gradient(&l, options.delta);
    let mut g = -(l.transpose() * &gq * &t_inv).transpose();
    let mut trace = vec![2.0 * f];
    let mut step = 1.0_f64;
    let mut converged = false;
    let mut accepted_steps = 0;

    for _ in 0..options.max_iterations {
        let mut gp = g.clone();
        for j in 0..m {
            let c: f64 = (0..m).map(|i| t[(i, j)] * g[(i, j)]).sum();
            for i in 0..m {
                gp[(i, j)] -= t[(i, j)] * c;
            }
        }
        let s = gp.iter().map(|v| v * v).sum::<f64>().sqrt();
        if s < options.tolerance {
            converged = true;
            break;
        }
        step *= 2.0;
        let mut took_step = false;
        for _ in 0..=10 {
            let candidate = &t - &gp * step;
            let Some(tt) = unit_columns(candidate) else {
                step /= 2.0;
                continue;
            };
            let Some(tt_inv) = tt.clone().try_inverse() else {
                step /= 2.0;
                continue;
            };
            let lt = &a * tt_inv.transpose();
            let (ft, gqt) = criterion_and_gradient(&lt, options.delta);
            if f - ft > 0.5 * s * s * step {
                t = tt;
                t_inv = tt_inv;
                l = lt;
                f = ft;
                gq = gqt;
                took_step = true;
                break;
            }
            step /= 2.0;
        }
        if !took_step {
            // The line search cannot find a decreasing step: the iterate is
            // numerically stationary, so stop with what we have.
            break;
        }
        accepted_steps += 1;
        g = -(l.transpose() * &gq * &t_inv).transpose();
        trace.push(2.0 * f);
    }

    let mut pattern = kaiser_row_restore(&l, &weights);
    let mut phi = t.transpose() * &t;
    let mut structure = &pattern * &phi;
    canonicalize(&mut pattern, &mut structure, &mut phi);
    Ok(RotationResult {
        pattern,
        structure,
        factor_correlations: phi,
        criterion_trace: trace,
        iterations: accepted_steps,
        converged,
        delta: options.delta,
        kaiser_normalized: options.kaiser_normalize,
    })
}

/// Rotation entry point for an extracted model.
pub fn oblimin_rotate(
    model: &FactorModel,
    options: &RotationOptions,
) -> Result<RotationResult, FactorError> {
    rotate_loadings(&model.loadings, options)
}

/// One variable's factor membership.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorAssignment {
    pub variable: String,
    /// Zero-based column of the winning pattern loading.
    pub factor_index: usize,
    /// The signed loading at that column.
    pub loading: f64,
    /// Absolute loading strictly above 0.5.
    pub high: bool,
    /// Another column matched the winning magnitude within 1e-12; the lower
    /// index won.
    pub tied: bool,
}

/// Assigns each variable to the factor with the largest absolute pattern
/// loading. Ties within 1e-12 go to the lower factor index and are flagged.
pub fn assign_factors(pattern: &DMatrix<f64>, labels: &[String]) -> Vec<FactorAssignment> {
    let (p, m) = pattern.shape();
    assert_eq!(labels.len(), p, "one label per pattern row");
    let mut out = Vec::with_capacity(p);
    for i in 0..p {
        let mut best = 0;
        for k in 1..m {
            if pattern[(i, k)].abs() > pattern[(i, best)].abs() + 1e-12 {
                best = k;
            }
        }
        let best_abs = pattern[(i, best)].abs();
        let tied = (0..m)
            .filter(|&k| k != best)
            .any(|k| (pattern[(i, k)].abs() - best_abs).abs() <= 1e-12);
        out.push(FactorAssignment {
            variable: labels[i].clone(),
            factor_index: best,
            loading: pattern[(i, best)],
            high: best_abs > 0.5,
            tied,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reproduction_gap(l: &DMatrix<f64>, r: &RotationResult) -> f64 {
        let original = l * l.transpose();
        let rotated = &r.pattern * &r.factor_correlations * r.pattern.transpose();
        (original - rotated).abs().max()
    }

    fn random_loadings(rng: &mut ChaCha8Rng, p: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(p, m, |_, _| rng.gen_range(-0.9..0.9))
    }

    #[test]
    fn perfect_simple_structure_is_a_fixed_point() {
        let l = DMatrix::from_row_slice(4, 2, &[0.8, 0.0, 0.8, 0.0, 0.0, 0.8, 0.0, 0.8]);
        let r = rotate_loadings(&l, &RotationOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_abs_diff_eq!(r.criterion_trace[0], 0.0, epsilon = 1e-15);
        for i in 0..4 {
            for j in 0..2 {
                assert_abs_diff_eq!(r.pattern[(i, j)], l[(i, j)], epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(r.factor_correlations[(0, 1)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn single_factor_returns_identity_rotation() {
        let l = DMatrix::from_row_slice(3, 1, &[-0.7, -0.6, 0.2]);
        let r = rotate_loadings(&l, &RotationOptions::default()).unwrap();
        // Sign convention flips the column so the largest entry is positive.
        assert_abs_diff_eq!(r.pattern[(0, 0)], 0.7, epsilon = 1e-15);
        assert_eq!(r.factor_correlations[(0, 0)], 1.0);
        assert!(r.converged);
    }

    #[test]
    fn rotation_preserves_reproduced_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let p = rng.gen_range(3..=10);
            let m = rng.gen_range(2..=3.min(p - 1));
            let l = random_loadings(&mut rng, p, m);
            let r = rotate_loadings(&l, &RotationOptions::default()).unwrap();
            assert!(reproduction_gap(&l, &r) < 1e-8, "gap {}", reproduction_gap(&l, &r));
            // Structure is the pattern times the factor correlations.
            let s = &r.pattern * &r.factor_correlations;
            assert!((s - &r.structure).abs().max() < 1e-10);
            // Factor correlations have unit diagonal.
            for k in 0..m {
                assert_abs_diff_eq!(r.factor_correlations[(k, k)], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn criterion_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let l = random_loadings(&mut rng, 6, 3);
            let r = rotate_loadings(&l, &RotationOptions::default()).unwrap();
            for w in r.criterion_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn beats_random_oblique_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l = random_loadings(&mut rng, 6, 3);
        let r = rotate_loadings(&l, &RotationOptions { kaiser_normalize: false, ..RotationOptions::default() }).unwrap();
        let mine = oblimin_criterion(&r.pattern, 0.0);
        let mut best_random = f64::INFINITY;
        for _ in 0..100 {
            let t = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let Some(t) = unit_columns(t) else { continue };
            let Some(t_inv) = t.clone().try_inverse() else { continue };
            let candidate = &l * t_inv.transpose();
            best_random = best_random.min(oblimin_criterion(&candidate, 0.0));
        }
        assert!(
            mine <= best_random + 1e-9,
            "rotated criterion {mine} vs best random {best_random}"
        );
    }

    #[test]
    fn trace_reports_the_pairwise_criterion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let l = random_loadings(&mut rng, 5, 2);
        let opts = RotationOptions {
            kaiser_normalize: false,
            ..RotationOptions::default()
        };
        let r = rotate_loadings(&l, &opts).unwrap();
        let last = *r.criterion_trace.last().unwrap();
        assert_abs_diff_eq!(last, oblimin_criterion(&r.pattern, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn kaiser_round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let l = random_loadings(&mut rng, 7, 3);
        let (normalized, weights) = kaiser_row_normalize(&l);
        for i in 0..7 {
            let h: f64 = normalized.row(i).iter().map(|v| v * v).sum();
            assert_abs_diff_eq!(h, 1.0, epsilon = 1e-12);
        }
        let restored = kaiser_row_restore(&normalized, &weights);
        assert!((restored - &l).abs().max() < 1e-14);
    }

    #[test]
    fn zero_row_survives_normalization() {
        let l = DMatrix::from_row_slice(3, 2, &[0.8, 0.1, 0.0, 0.0, 0.2, 0.7]);
        let (normalized, weights) = kaiser_row_normalize(&l);
        assert_eq!(weights[1], 1.0);
        assert_eq!(normalized[(1, 0)], 0.0);
        let r = rotate_loadings(&l, &RotationOptions::default()).unwrap();
        assert!(reproduction_gap(&l, &r) < 1e-8);
    }

    #[test]
    fn columns_ordered_by_structure_strength() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let l = random_loadings(&mut rng, 8, 3);
            let r = rotate_loadings(&l, &RotationOptions::default()).unwrap();
            let ss: Vec<f64> = (0..3)
                .map(|k| r.structure.column(k).iter().map(|v| v * v).sum())
                .collect();
            for w in ss.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
            for k in 0..3 {
                let col = r.pattern.column(k);
                let lead = (0..8)
                    .max_by(|&a, &b| col[a].abs().partial_cmp(&col[b].abs()).unwrap())
                    .unwrap();
                assert!(col[lead] >= 0.0);
            }
        }
    }

    #[test]
    fn assigns_rows_to_strongest_factor() {
        let pattern = DMatrix::from_row_slice(
            3,
            4,
            &[
                0.913, 0.022, -0.130, -0.075,
                -0.037, 0.022, 0.011, -0.617,
                0.3, 0.3, 0.0, 0.0,
            ],
        );
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let got = assign_factors(&pattern, &labels);
        assert_eq!(got[0].factor_index, 0);
        assert!(got[0].high);
        assert!(!got[0].tied);
        assert_eq!(got[1].factor_index, 3);
        assert!(got[1].high);
        assert_abs_diff_eq!(got[1].loading, -0.617, epsilon = 1e-15);
        // Tie goes to the lower index, flagged, and 0.3 is not high.
        assert_eq!(got[2].factor_index, 0);
        assert!(got[2].tied);
        assert!(!got[2].high);
    }

    #[test]
    fn assignment_ignores_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let pattern = random_loadings(&mut rng, 6, 3);
        let labels: Vec<String> = (0..6).map(|i| format!("v{i}")).collect();
        let base = assign_factors(&pattern, &labels);
        let scaled = assign_factors(&(pattern * 3.7), &labels);
        for (b, s) in base.iter().zip(&scaled) {
            assert_eq!(b.factor_index, s.factor_index);
        }
    }
}
