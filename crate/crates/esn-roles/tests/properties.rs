//! Randomized invariant checks. Each property is something the crate
//! promises for every input, not just the fixtures: order independence,
//! idempotence, conservation counts, range bounds, and algebraic
//! identities that survive rotation, rescaling and restarts.

use esn_roles::cluster::{derive_rules, kmeans, ClusterOptions};
use esn_roles::factor::{
    assign_factors, correlation_matrix, rotate_loadings, sorted_symmetric_eigen, DataSet,
    RotationOptions,
};
use esn_roles::graph::{betweenness, ReplyGraph};
use esn_roles::ids::{MessageId, UserId};
use esn_roles::ingest::{
    build_threads, eligible_users, filter_public, filter_window, parse_messages, parse_users,
    ColumnMap, EligibilityMode, KeywordLists, StudyWindow, Thread,
};
use esn_roles::metrics::{compute_metric_matrix, MetricId, MetricPolicy};
use esn_roles::graph::centrality_table;
use esn_roles::synth::{default_archetypes, generate, SyntheticCorpus};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

fn window_of_months(months: u32) -> StudyWindow {
    let start = "2024-01-01T00:00:00Z".parse().unwrap();
    let end = start + chrono::Months::new(months);
    StudyWindow::new(start, end).unwrap()
}

fn small_corpus(users: usize, months: u32, seed: u64) -> (SyntheticCorpus, StudyWindow) {
    let window = window_of_months(months);
    let corpus = generate(&default_archetypes(), users, &window, seed).unwrap();
    (corpus, window)
}

/// Thread content reduced to comparable form, ignoring reply order within
/// the index's own guarantees.
fn thread_digest(t: &Thread) -> (MessageId, UserId, Vec<MessageId>, BTreeSet<UserId>) {
    (
        t.initial.clone(),
        t.initial_author.clone(),
        t.replies.clone(),
        t.participants.clone(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn thread_reconstruction_ignores_row_order(
        users in 10usize..40,
        months in 1u32..3,
        seed in any::<u64>(),
        shuffle_seed in any::<u64>(),
    ) {
        let (corpus, _) = small_corpus(users, months, seed);
        let ordered = build_threads(&corpus.messages);
        let mut shuffled = corpus.messages.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let reshuffled = build_threads(&shuffled);

        let a: BTreeMap<_, _> = ordered.threads.iter().map(|(id, t)| (id, thread_digest(t))).collect();
        let b: BTreeMap<_, _> = reshuffled.threads.iter().map(|(id, t)| (id, thread_digest(t))).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(&ordered.non_thread_initials, &reshuffled.non_thread_initials);
        prop_assert_eq!(ordered.repairs.orphans.len(), reshuffled.repairs.orphans.len());
        prop_assert_eq!(ordered.repairs.reattached.len(), reshuffled.repairs.reattached.len());
    }

    #[test]
    fn visibility_and_window_filters_are_idempotent(
        users in 10usize..40,
        months in 1u32..3,
        seed in any::<u64>(),
    ) {
        let (corpus, window) = small_corpus(users, months, seed);
        let once = filter_public(corpus.messages.clone());
        let twice = filter_public(once.clone());
        prop_assert_eq!(&once, &twice);
        let windowed = filter_window(once.clone(), &window);
        let windowed_twice = filter_window(windowed.clone(), &window);
        prop_assert_eq!(&windowed, &windowed_twice);
    }

    #[test]
    fn threads_and_quiet_initials_partition_the_initials(
        users in 10usize..40,
        months in 1u32..3,
        seed in any::<u64>(),
    ) {
        let (corpus, _) = small_corpus(users, months, seed);
        let index = build_threads(&corpus.messages);
        let initials = corpus.messages.iter().filter(|m| m.is_initial()).count();
        prop_assert_eq!(index.thread_count() + index.non_thread_initials.len(), initials);
    }

    #[test]
    fn monthly_presence_implies_the_matching_total_threshold(
        users in 10usize..40,
        months in 1u32..3,
        seed in any::<u64>(),
    ) {
        let (corpus, window) = small_corpus(users, months, seed);
        let full_months = window.full_months().len() as u64;
        prop_assume!(full_months >= 1);
        let monthly = eligible_users(
            &corpus.messages, &corpus.users, &window, EligibilityMode::PerMonth, 1,
        ).unwrap();
        let total = eligible_users(
            &corpus.messages, &corpus.users, &window, EligibilityMode::Total, full_months,
        ).unwrap();
        prop_assert!(monthly.is_subset(&total));
    }

    #[test]
    fn metric_columns_respect_their_documented_ranges(
        users in 10usize..40,
        months in 1u32..3,
        seed in any::<u64>(),
    ) {
        let (corpus, window) = small_corpus(users, months, seed);
        let messages = filter_window(filter_public(corpus.messages.clone()), &window);
        let threads = build_threads(&messages);
        let graph = ReplyGraph::from_messages(&messages, &threads);
        let table = centrality_table(&graph, true);
        let eligible = eligible_users(
            &messages, &corpus.users, &window, EligibilityMode::Total, 1,
        ).unwrap();
        prop_assume!(!eligible.is_empty());
        let matrix = compute_metric_matrix(
            &messages, &threads, &table, &eligible, MetricPolicy::default(),
        ).unwrap();

        let col = |id: MetricId| MetricId::ALL.iter().position(|x| *x == id).unwrap();
        let unit = [
            MetricId::V1, MetricId::V2, MetricId::V3, MetricId::V6,
            MetricId::V7, MetricId::V8, MetricId::V9, MetricId::V11,
        ];
        for row in 0..matrix.users.len() {
            for id in MetricId::ALL {
                let v = matrix.values[(row, col(id))];
                prop_assert!(v.is_finite(), "{:?} not finite", id);
                prop_assert!(v >= 0.0, "{:?} negative: {v}", id);
            }
            for id in unit {
                let v = matrix.values[(row, col(id))];
                prop_assert!(v <= 1.0, "{:?} exceeds 1: {v}", id);
            }
            // Initiating a thread means appearing in it, with one shared
            // denominator, so the share ordering is exact.
            prop_assert!(matrix.values[(row, col(MetricId::V2))] <= matrix.values[(row, col(MetricId::V1))]);
        }
    }

    #[test]
    fn generated_corpora_roundtrip_their_own_csv(
        users in 10usize..30,
        months in 1u32..3,
        seed in any::<u64>(),
    ) {
        let (corpus, _) = small_corpus(users, months, seed);
        let log = parse_messages(
            corpus.messages_csv().as_bytes(), &ColumnMap::default(), &KeywordLists::default(),
        ).unwrap();
        prop_assert!(log.rejections.is_empty(), "rejections: {:?}", log.rejections);
        prop_assert!(!log.flags_derived, "generated logs carry explicit flag columns");
        prop_assert_eq!(&log.messages, &corpus.messages);
        let roster = parse_users(corpus.users_csv().as_bytes()).unwrap();
        prop_assert!(roster.rejections.is_empty());
        prop_assert_eq!(&roster.users, &corpus.users);
    }
}

/// Rows and columns on a coarse grid: distinct magnitudes stay far apart,
/// so comparisons survive rescaling without ulp surprises.
fn grid_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-900i32..900, rows * cols).prop_map(move |cells| {
        DMatrix::from_fn(rows, cols, |i, j| f64::from(cells[i * cols + j]) / 1000.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn correlations_ignore_positive_affine_rescaling(
        (n, p) in (6usize..30, 2usize..7),
        cells in proptest::collection::vec(-500i32..500, 30 * 7),
        scales in proptest::collection::vec(1u32..50, 7),
        shifts in proptest::collection::vec(-40i32..40, 7),
    ) {
        let data = DMatrix::from_fn(n, p, |i, j| f64::from(cells[i * 7 + j]) / 100.0);
        let rescaled = DMatrix::from_fn(n, p, |i, j| {
            data[(i, j)] * f64::from(scales[j]) / 8.0 + f64::from(shifts[j])
        });
        let labels: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let base = correlation_matrix(&DataSet::new(labels.clone(), data).unwrap()).unwrap();
        let moved = correlation_matrix(&DataSet::new(labels, rescaled).unwrap()).unwrap();

        prop_assert_eq!(&base.zero_variance, &moved.zero_variance);
        for i in 0..p {
            prop_assert!((base.values[(i, i)] - 1.0).abs() <= 1e-12);
            for j in 0..p {
                let v = base.values[(i, j)];
                prop_assert!((v - base.values[(j, i)]).abs() <= 1e-12, "asymmetry at {i},{j}");
                prop_assert!(v.abs() <= 1.0 + 1e-12, "correlation out of range: {v}");
                prop_assert!(
                    (v - moved.values[(i, j)]).abs() <= 1e-8,
                    "affine rescaling moved r[{i},{j}] from {v} to {}",
                    moved.values[(i, j)]
                );
            }
        }
    }

    #[test]
    fn correlation_eigenvalues_are_sorted_and_sum_to_the_dimension(
        (n, p) in (6usize..30, 2usize..7),
        cells in proptest::collection::vec(-500i32..500, 30 * 7),
    ) {
        let data = DMatrix::from_fn(n, p, |i, j| f64::from(cells[i * 7 + j]) / 100.0);
        let labels: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let corr = correlation_matrix(&DataSet::new(labels, data).unwrap()).unwrap();
        let eig = sorted_symmetric_eigen(&corr.values);
        let sum: f64 = eig.values.iter().sum();
        prop_assert!((sum - p as f64).abs() <= 1e-8, "trace drifted: {sum} vs {p}");
        for w in eig.values.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-12, "eigenvalues out of order");
        }
    }

    #[test]
    fn rotation_preserves_the_common_part_and_communalities(
        m in 1usize..4,
        p_extra in 2usize..6,
        cells in proptest::collection::vec(-850i32..850, 9 * 3),
    ) {
        let p = m + p_extra;
        let mut loadings = DMatrix::zeros(p, m);
        for i in 0..p {
            for j in 0..m {
                loadings[(i, j)] = f64::from(cells[i * 3 + j]) / 1000.0;
            }
            let norm2: f64 = (0..m).map(|j| loadings[(i, j)].powi(2)).sum();
            if norm2 < 1e-4 {
                loadings[(i, 0)] = 0.25;
            } else if norm2 > 0.95 {
                let s = (0.95 / norm2).sqrt();
                for j in 0..m { loadings[(i, j)] *= s; }
            }
        }
        let rot = rotate_loadings(&loadings, &RotationOptions::default()).unwrap();
        let reproduced = &rot.pattern * &rot.factor_correlations * rot.pattern.transpose();
        let original = &loadings * loadings.transpose();
        prop_assert!((&reproduced - &original).abs().max() <= 1e-8);
        for j in 0..m {
            prop_assert!((rot.factor_correlations[(j, j)] - 1.0).abs() <= 1e-10);
        }
        for w in rot.criterion_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn factor_assignment_survives_uniform_rescaling(
        pattern in (2usize..8, 1usize..4).prop_flat_map(|(p, m)| grid_matrix(p, m)),
        scale_milli in 50u32..20_000,
    ) {
        let labels: Vec<String> = (0..pattern.nrows()).map(|i| format!("v{i}")).collect();
        let scale = f64::from(scale_milli) / 1000.0;
        let scaled = &pattern * scale;
        let base = assign_factors(&pattern, &labels);
        let moved = assign_factors(&scaled, &labels);
        for (a, b) in base.iter().zip(&moved) {
            prop_assert_eq!(a.factor_index, b.factor_index, "winner moved for {}", a.variable);
        }
    }

    #[test]
    fn kmeans_reports_match_their_own_geometry(
        scores in (6usize..30, 1usize..4).prop_flat_map(|(n, m)| grid_matrix(n, m)),
        k in 2usize..5,
        seed in any::<u64>(),
    ) {
        prop_assume!(scores.nrows() >= k);
        let options = ClusterOptions { restarts: 2, ..ClusterOptions::default() };
        let clustering = kmeans(&scores, k, seed, &options).unwrap();
        let n = scores.nrows();
        let m = scores.ncols();
        prop_assert_eq!(clustering.labels.len(), n);
        let mut counts = vec![0usize; k];
        for &label in &clustering.labels {
            prop_assert!(label < k);
            counts[label] += 1;
        }
        prop_assert!(counts.iter().all(|&c| c > 0), "empty cluster in {counts:?}");

        let mut wcss = 0.0;
        let mut sums: DMatrix<f64> = DMatrix::zeros(k, m);
        for (row, &label) in clustering.labels.iter().enumerate() {
            for c in 0..m {
                let d = scores[(row, c)] - clustering.centroids[(label, c)];
                wcss += d * d;
                sums[(label, c)] += scores[(row, c)];
            }
        }
        prop_assert!((wcss - clustering.wcss).abs() <= 1e-9 * (1.0 + wcss));
        for cluster in 0..k {
            for c in 0..m {
                let mean = sums[(cluster, c)] / counts[cluster] as f64;
                prop_assert!((mean - clustering.centroids[(cluster, c)]).abs() <= 1e-9);
            }
        }
        let s = clustering.silhouette.expect("silhouette exists for k >= 2");
        prop_assert!((-1.0..=1.0).contains(&s));

        let rules = derive_rules(&clustering, &scores, &fake_users(n));
        prop_assert_eq!(rules.len(), k);
        let mut members = 0;
        for (cluster, rule) in rules.iter().enumerate() {
            prop_assert_eq!(rule.cluster, cluster);
            prop_assert_eq!(rule.levels.len(), m);
            prop_assert_eq!(rule.member_count, counts[cluster]);
            prop_assert!(rule.exemplars.len() <= 3.min(counts[cluster]));
            members += rule.member_count;
        }
        prop_assert_eq!(members, n);
    }

    #[test]
    fn extra_restarts_never_worsen_the_fit(
        scores in (8usize..30, 1usize..3).prop_flat_map(|(n, m)| grid_matrix(n, m)),
        seed in any::<u64>(),
    ) {
        prop_assume!(scores.nrows() >= 3);
        let few = kmeans(&scores, 3, seed, &ClusterOptions { restarts: 2, ..ClusterOptions::default() }).unwrap();
        let many = kmeans(&scores, 3, seed, &ClusterOptions { restarts: 6, ..ClusterOptions::default() }).unwrap();
        // The restart streams are keyed by index, so more restarts rank a
        // superset of the same candidates.
        prop_assert!(many.wcss <= few.wcss + 1e-12, "{} > {}", many.wcss, few.wcss);
    }

    #[test]
    fn betweenness_of_a_directed_path_matches_the_closed_form(n in 2usize..30) {
        let edges: Vec<(UserId, UserId, u64)> = (0..n - 1)
            .map(|i| {
                (
                    UserId::from(format!("p{i:02}").as_str()),
                    UserId::from(format!("p{:02}", i + 1).as_str()),
                    1,
                )
            })
            .collect();
        let graph = ReplyGraph::from_weighted_edges(edges);
        let bc = betweenness(&graph);
        for (i, value) in bc.iter().enumerate() {
            let expected = (i * (n - 1 - i)) as f64;
            prop_assert!((value - expected).abs() <= 1e-12, "node {i}: {value} vs {expected}");
        }
    }
}

fn fake_users(n: usize) -> Vec<UserId> {
    (0..n).map(|i| UserId::from(format!("u{i:03}").as_str())).collect()
}
