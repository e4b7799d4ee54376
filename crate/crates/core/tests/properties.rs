use proptest::prelude::*;
use shotcast_core::baselines::loo_counts;
use shotcast_core::estimators::correct_distance_matrix;
use shotcast_core::estimators::naive_distance_matrix;
use shotcast_core::metrics::mean_mape;
use shotcast_core::synthetic::simplex_centers;
use shotcast_core::{
    davies_bouldin_index, gaussian_kl, nearest_index, project_to_class_subspace, roc_curve, unbiased_squared_distance, ClassLabel,
    DMatrix, DVector, FewShotTask,
};

fn grouped(n: usize, k: usize, dim: usize, data: &[f64]) -> FewShotTask {
    let support = (0..n).map(|c| DMatrix::from_fn(dim, k, |r, s| data[(c * k + s) * dim + r] + c as f64)).collect();
    FewShotTask::from_grouped((0..n as i64).map(ClassLabel::Int).collect(), support, None).unwrap()
}

fn task_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (2usize..5, 2usize..5, 2usize..7).prop_flat_map(|(n, k, d)| (Just(n), Just(k), Just(d), prop::collection::vec(-3.0f64..3.0, n * k * d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_keeps_nearest_mean((n, k, d, data) in task_strategy(), q in prop::collection::vec(-4.0f64..4.0, 6)) {
        let task = grouped(n, k, d, &data);
        let means = task.class_means();
        let p = project_to_class_subspace(&task, &means).unwrap();
        let z = DVector::from_column_slice(&q[..d]);
        let full: Vec<f64> = means.iter().map(|m| (&z - m).norm_squared()).collect();
        let zp = p.project(&z);
        let proj: Vec<f64> = p.means_proj.iter().map(|m| (&zp - m).norm_squared()).collect();
        // differences of squared distances are preserved
        for c in 1..n {
            prop_assert!(((full[c] - full[0]) - (proj[c] - proj[0])).abs() < 1e-8);
        }
        let a = nearest_index(z.as_slice(), means.iter().map(|m| m.as_slice()));
        let b = nearest_index(zp.as_slice(), p.means_proj.iter().map(|m| m.as_slice()));
        let margin = full.iter().enumerate().filter(|&(c, _)| c != a).map(|(_, v)| v - full[a]).fold(f64::INFINITY, f64::min);
        prop_assert!(a == b || margin < 1e-8);
    }

    #[test]
    fn correction_never_increases_distances(naive in 0.0f64..50.0, ta in 0.0f64..10.0, tb in 0.0f64..10.0, ka in 1usize..30, kb in 1usize..30, extra in 0.0f64..5.0) {
        let base = unbiased_squared_distance(naive, ta, tb, ka, kb);
        prop_assert!(base <= naive + 1e-12);
        prop_assert!(unbiased_squared_distance(naive, ta + extra, tb, ka, kb) <= base + 1e-12);
        prop_assert!(unbiased_squared_distance(naive, ta, tb, ka + 1, kb) >= base - 1e-12);
    }

    #[test]
    fn corrected_matrix_is_symmetric_and_nonnegative((n, k, d, data) in task_strategy(), scale in 0.1f64..5.0) {
        let task = grouped(n, k, d, &data);
        let naive = naive_distance_matrix(&task.class_means());
        let traces = vec![scale; n];
        let fixed = correct_distance_matrix(&naive, &traces, &vec![k; n]);
        let floor = (1e-9 * naive.squared.max()).max(1e-12);
        for i in 0..n {
            prop_assert_eq!(fixed.squared[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(fixed.squared[(i, j)], fixed.squared[(j, i)]);
                if i != j {
                    prop_assert!(fixed.squared[(i, j)] >= floor);
                }
                prop_assert!(fixed.squared[(i, j)] <= naive.squared[(i, j)].max(floor));
            }
        }
    }

    #[test]
    fn davies_bouldin_is_scale_and_shift_invariant((n, k, d, data) in task_strategy(), scale in 0.01f64..100.0, shift in -10.0f64..10.0) {
        let task = grouped(n, k, d, &data);
        let moved = FewShotTask::from_grouped(
            task.classes().to_vec(),
            task.support().iter().map(|m| m.map(|v| v * scale + shift)).collect(),
            None,
        ).unwrap();
        let a = davies_bouldin_index(&task).unwrap();
        let b = davies_bouldin_index(&moved).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn loo_counts_are_bounded((n, k, d, data) in task_strategy()) {
        let task = grouped(n, k, d, &data);
        let (errors, events) = loo_counts(&task).unwrap();
        prop_assert_eq!(events, n * k);
        prop_assert!(errors <= events);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(a in prop::collection::vec(-2.0f64..2.0, 9), b in prop::collection::vec(-2.0f64..2.0, 9), mu in prop::collection::vec(-3.0f64..3.0, 6)) {
        let spd = |v: &[f64]| {
            let m = DMatrix::from_column_slice(3, 3, v);
            &m * m.transpose() + DMatrix::identity(3, 3) * 0.1
        };
        let (s1, s2) = (spd(&a), spd(&b));
        let (m1, m2) = (DVector::from_column_slice(&mu[..3]), DVector::from_column_slice(&mu[3..]));
        prop_assert!(gaussian_kl(&m1, &s1, &m2, &s2).unwrap() >= -1e-9);
        prop_assert!(gaussian_kl(&m1, &s1, &m1, &s1).unwrap().abs() < 1e-9);
    }

    #[test]
    fn mape_ignores_task_order(pairs in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 1..40), seed in any::<u64>()) {
        let mut shuffled = pairs.clone();
        let len = shuffled.len();
        for i in (1..len).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let a = mean_mape(&pairs).unwrap();
        let b = mean_mape(&shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn auc_matches_pair_counts(rows in prop::collection::vec((0u8..6, 0.0f64..1.0), 2..60)) {
        // coarse scores force ties
        let scores: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 5.0).collect();
        let truths: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let pos: Vec<usize> = (0..rows.len()).filter(|&i| truths[i] >= 0.5).collect();
        let neg: Vec<usize> = (0..rows.len()).filter(|&i| truths[i] < 0.5).collect();
        prop_assume!(!pos.is_empty() && !neg.is_empty());
        let mut wins = 0.0;
        for &p in &pos {
            for &q in &neg {
                wins += if scores[p] > scores[q] { 1.0 } else if scores[p] == scores[q] { 0.5 } else { 0.0 };
            }
        }
        let auc = roc_curve(&scores, &truths, 0.5).unwrap().auc;
        prop_assert!((auc - wins / (pos.len() * neg.len()) as f64).abs() < 1e-12);
    }

    #[test]
    fn simplex_is_equidistant(n in 2usize..12, extra in 0usize..5, r in 0.1f64..10.0) {
        let centers = simplex_centers(n, r, n - 1 + extra).unwrap();
        for i in 0..n {
            for j in i + 1..n {
                prop_assert!(((&centers[i] - &centers[j]).norm() - r).abs() < 1e-9 * r);
            }
        }
    }
}
