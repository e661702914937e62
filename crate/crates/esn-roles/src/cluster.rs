//! Groups users by factor scores and describes each group.

use nalgebra::DMatrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::standardize;
use crate::ids::UserId;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("{k} clusters requested for {n} users")]
    TooFewUsers { n: usize, k: usize },
    #[error("all score rows are identical; clustering cannot separate anything")]
    DegenerateScores,
    #[error("cluster count range {min}..={max} is empty or starts below 2")]
    BadRange { min: usize, max: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub max_iterations: usize,
    pub restarts: usize,
    /// Standardize score columns before clustering. Off by default: the
    /// scoring stage already yields columns on comparable scales.
    pub standardize: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            restarts: 10,
            standardize: false,
        }
    }
}

/// A fitted grouping of the score rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Cluster index per score row.
    pub labels: Vec<usize>,
    /// k x m centroids in the clustered space.
    #[serde(with = "crate::factor::serde_matrix")]
    pub centroids: DMatrix<f64>,
    /// Total squared distance of rows to their centroids.
    pub wcss: f64,
    /// Mean silhouette over all rows; absent for a single cluster.
    pub silhouette: Option<f64>,
    pub seed: u64,
}

fn squared_distance(a: &DMatrix<f64>, row: usize, centroid: &DMatrix<f64>, c: usize) -> f64 {
    let m = a.ncols();
    let mut d = 0.0;
    for j in 0..m {
        let diff = a[(row, j)] - centroid[(c, j)];
        d += diff * diff;
    }
    d
}

/// Picks starting centroids: first uniformly, the rest weighted by squared
/// distance to the nearest centroid chosen so far. When every remaining
/// distance is zero (fewer distinct points than clusters) the pick falls
/// back to uniform.
fn seed_centroids(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, m) = data.shape();
    let mut centroids = DMatrix::zeros(k, m);
    let first = rng.gen_range(0..n);
    for j in 0..m {
        centroids[(0, j)] = data[(first, j)];
    }
    let mut best_d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(data, i, &centroids, 0))
        .collect();
    for c in 1..k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total > 0.0 {
            WeightedIndex::new(&best_d2)
                .expect("nonzero total weight")
                .sample(rng)
        } else {
            rng.gen_range(0..n)
        };
        for j in 0..m {
            centroids[(c, j)] = data[(pick, j)];
        }
        for i in 0..n {
            best_d2[i] = best_d2[i].min(squared_distance(data, i, &centroids, c));
        }
    }
    centroids
}

/// Nearest-centroid assignment. A row keeps its current cluster on an exact
/// distance tie, so a repaired empty cluster retains its forced member when
/// points coincide; otherwise ties go to the lowest index.
fn assign(data: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) -> f64 {
    let n = data.nrows();
    let k = centroids.nrows();
    let mut wcss = 0.0;
    for i in 0..n {
        let mut best = 0;
        let mut best_d = squared_distance(data, i, centroids, 0);
        for c in 1..k {
            let d = squared_distance(data, i, centroids, c);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        let current = labels[i];
        if current < k && squared_distance(data, i, centroids, current) == best_d {
            best = current;
        }
        labels[i] = best;
        wcss += best_d;
    }
    wcss
}

fn lloyd(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng, max_iterations: usize) -> (Vec<usize>, DMatrix<f64>, f64) {
    let (n, m) = data.shape();
    let mut centroids = seed_centroids(data, k, rng);
    let mut labels = vec![0usize; n];
    let mut wcss = assign(data, &centroids, &mut labels);
    for _ in 0..max_iterations {
        // Means of current members.
        let mut counts = vec![0usize; k];
        let mut sums: DMatrix<f64> = DMatrix::zeros(k, m);
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..m {
                sums[(labels[i], j)] += data[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..m {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        // An emptied cluster takes the row farthest from its centroid among
        // clusters that can spare one, dropping that row's contribution to
        // zero. The sticky tie rule in assign keeps the move in place even
        // when the stolen row duplicates other points.
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = None;
                let mut far_d = -1.0;
                for i in 0..n {
                    if counts[labels[i]] < 2 {
                        continue;
                    }
                    let d = squared_distance(data, i, &centroids, labels[i]);
                    if d > far_d {
                        far = Some(i);
                        far_d = d;
                    }
                }
                let far = far.expect("n >= k leaves a cluster with two members");
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                for j in 0..m {
                    centroids[(c, j)] = data[(far, j)];
                }
            }
        }
        let previous = labels.clone();
        let next_wcss = assign(data, &centroids, &mut labels);
        assert!(
            next_wcss <= wcss + 1e-9 * wcss.max(1.0),
            "within-cluster sum of squares rose from {wcss} to {next_wcss}"
        );
        wcss = next_wcss;
        if labels == previous {
            break;
        }
    }
    (labels, centroids, wcss)
}

/// Mean silhouette width over all rows. Singleton-cluster rows score 0, as
/// do rows whose nearest distances are all zero.
pub fn silhouette_mean(data: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let n = data.nrows();
    if n == 0 || k < 2 {
        return 0.0;
    }
    let counts = {
        let mut c = vec![0usize; k];
        for &l in labels {
            c[l] += 1;
        }
        c
    };
    let per_row: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0f64; k];
            for other in 0..n {
                if other != i {
                    let mut d = 0.0;
                    for j in 0..data.ncols() {
                        let diff = data[(i, j)] - data[(other, j)];
                        d += diff * diff;
                    }
                    sums[labels[other]] += d.sqrt();
                }
            }
            let own = labels[i];
            if counts[own] <= 1 {
                return 0.0;
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 || !b.is_finite() {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    per_row.iter().sum::<f64>() / n as f64
}

/// Best-of-restarts k-means. Each restart draws its starting points from an
/// independent stream of the same seed, so the outcome does not depend on
/// scheduling; the winner is the lowest within-cluster sum of squares with
/// the restart index as tiebreak.
pub fn kmeans(
    scores: &DMatrix<f64>,
    k: usize,
    seed: u64,
    options: &ClusterOptions,
) -> Result<Clustering, ClusterError> {
    let n = scores.nrows();
    if k == 0 || n < k {
        return Err(ClusterError::TooFewUsers { n, k });
    }
    let data = if options.standardize {
        standardize(scores).0
    } else {
        scores.clone()
    };
    let runs: Vec<(Vec<usize>, DMatrix<f64>, f64)> = (0..options.restarts.max(1))
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(restart as u64);
            lloyd(&data, k, &mut rng, options.max_iterations)
        })
        .collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| {
            runs[a]
                .2
                .partial_cmp(&runs[b].2)
                .expect("finite sums of squares")
                .then(a.cmp(&b))
        })
        .expect("at least one restart");
    let (labels, centroids, wcss) = runs[best].clone();
    let silhouette = (k >= 2).then(|| silhouette_mean(&data, &labels, k));
    Ok(Clustering {
        k,
        labels,
        centroids,
        wcss,
        silhouette,
        seed,
    })
}

/// Fits every cluster count in the inclusive range and keeps the one with
/// the highest mean silhouette; ties go to the smaller count.
pub fn select_k(
    scores: &DMatrix<f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
    options: &ClusterOptions,
) -> Result<(usize, Vec<(usize, f64)>), ClusterError> {
    if k_min < 2 || k_min > k_max {
        return Err(ClusterError::BadRange {
            min: k_min,
            max: k_max,
        });
    }
    let n = scores.nrows();
    if n <= k_max {
        return Err(ClusterError::TooFewUsers { n, k: k_max });
    }
    let first_row: Vec<f64> = (0..scores.ncols()).map(|j| scores[(0, j)]).collect();
    let all_identical = (0..n).all(|i| {
        (0..scores.ncols()).all(|j| scores[(i, j)] == first_row[j])
    });
    if all_identical {
        return Err(ClusterError::DegenerateScores);
    }
    let mut tried = Vec::new();
    let mut best = (k_min, f64::NEG_INFINITY);
    for k in k_min..=k_max {
        let clustering = kmeans(scores, k, seed, options)?;
        let s = clustering.silhouette.unwrap_or(0.0);
        tried.push((k, s));
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok((best.0, tried))
}

/// Position of a centroid coordinate relative to the score column spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    Medium,
    High,
}

/// Descriptive rule for one cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleRule {
    pub cluster: usize,
    /// One level per score dimension: high when the centroid sits at least
    /// half a standard deviation above the column mean, low when at least
    /// half below, medium between.
    pub levels: Vec<Level>,
    pub member_count: usize,
    /// Up to three members closest to the centroid.
    pub exemplars: Vec<UserId>,
}

/// Derives the level rules and exemplars for every cluster. Dimensions
/// whose scores never vary read as medium.
pub fn derive_rules(
    clustering: &Clustering,
    scores: &DMatrix<f64>,
    users: &[UserId],
) -> Vec<RoleRule> {
    let (n, m) = scores.shape();
    assert_eq!(n, clustering.labels.len(), "one label per score row");
    assert_eq!(n, users.len(), "one user per score row");
    let mut means = vec![0.0f64; m];
    for j in 0..m {
        means[j] = (0..n).map(|i| scores[(i, j)]).sum::<f64>() / n as f64;
    }
    let mut sds = vec![0.0f64; m];
    for j in 0..m {
        let ss: f64 = (0..n).map(|i| (scores[(i, j)] - means[j]).powi(2)).sum();
        sds[j] = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    }
    (0..clustering.k)
        .map(|c| {
            let levels = (0..m)
                .map(|j| {
                    if sds[j] == 0.0 {
                        return Level::Medium;
                    }
                    let z = (clustering.centroids[(c, j)] - means[j]) / sds[j];
                    if z >= 0.5 {
                        Level::High
                    } else if z <= -0.5 {
                        Level::Low
                    } else {
                        Level::Medium
                    }
                })
                .collect();
            let mut members: Vec<usize> = (0..n)
                .filter(|&i| clustering.labels[i] == c)
                .collect();
            members.sort_by(|&a, &b| {
                let da = squared_distance(scores, a, &clustering.centroids, c);
                let db = squared_distance(scores, b, &clustering.centroids, c);
                da.partial_cmp(&db)
                    .expect("finite distances")
                    .then(a.cmp(&b))
            });
            RoleRule {
                cluster: c,
                levels,
                member_count: members.len(),
                exemplars: members
                    .iter()
                    .take(3)
                    .map(|&i| users[i].clone())
                    .collect(),
            }
        })
        .collect()
}

/// Agreement between two partitions of the same rows, corrected for
/// chance: 1 for identical groupings, around 0 for independent ones. The
/// degenerate case where both partitions are all singletons or both are one
/// block is exact agreement, 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same rows");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |&m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let mut contingency = vec![vec![0u64; kb]; ka];
    for i in 0..n {
        contingency[a[i]][b[i]] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = contingency
        .iter()
        .flat_map(|row| row.iter())
        .map(|&v| choose2(v))
        .sum();
    let sum_a: f64 = (0..ka)
        .map(|i| choose2(contingency[i].iter().sum::<u64>()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(contingency.iter().map(|row| row[j]).sum::<u64>()))
        .sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denominator = max_index - expected;
    if denominator == 0.0 {
        return 1.0;
    }
    (sum_cells - expected) / denominator
}
