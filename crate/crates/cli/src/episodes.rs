//! Few-shot episodes drawn from a feature store, and their ground truth.

use rand::seq::index::sample;
use shotcast_core::seeding::{derive_seed, stream_rng};
use shotcast_core::{nearest_index, ClassLabel, FewShotTask};

use crate::error::{CliError, Result};
use crate::store::FeatureStore;

/// Query samples per class below which ground truth is flagged.
pub const DEFAULT_N_QUERY: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub index: usize,
    pub seed: u64,
    pub task: FewShotTask,
    pub low_confidence: bool,
}

/// `count` episodes of `n` classes with `k` support and `n_query` query
/// samples each. Classes and samples are drawn uniformly without
/// replacement; episode `i` depends only on `(seed, i)`.
pub fn sample_episodes(store: &FeatureStore, n: usize, k: usize, n_query: usize, count: usize, seed: u64) -> Result<Vec<Episode>> {
    (0..count).map(|i| sample_episode(store, n, k, n_query, i, seed)).collect()
}

pub fn sample_episode(store: &FeatureStore, n: usize, k: usize, n_query: usize, index: usize, seed: u64) -> Result<Episode> {
    if n < 2 || k == 0 {
        return Err(CliError::Usage("episodes need at least 2 classes and 1 shot".into()));
    }
    if store.n_classes() < n {
        return Err(CliError::TooFewClasses { available: store.n_classes(), needed: n });
    }
    let episode_seed = derive_seed(seed, index as u64);
    let mut rng = stream_rng(episode_seed, 0);
    let mut chosen = sample(&mut rng, store.n_classes(), n).into_vec();
    chosen.sort_unstable();
    let needed = k + n_query;
    let mut support = Vec::with_capacity(n);
    let mut query = Vec::with_capacity(n);
    for &c in &chosen {
        let pool = store.pool(c);
        if pool.ncols() < needed {
            return Err(CliError::InsufficientPool { label: store.classes()[c].to_string(), available: pool.ncols(), needed });
        }
        let picks = sample(&mut rng, pool.ncols(), needed).into_vec();
        support.push(pool.select_columns(&picks[..k]));
        query.push(pool.select_columns(&picks[k..]));
    }
    let classes: Vec<ClassLabel> = chosen.iter().map(|&c| store.classes()[c].clone()).collect();
    let task = FewShotTask::from_grouped(classes, support, (n_query > 0).then_some(query))?;
    Ok(Episode { index, seed: episode_seed, task, low_confidence: n_query < DEFAULT_N_QUERY })
}

/// Accuracy on the query set of the NCM classifier fitted on the support set.
pub fn true_accuracy(task: &FewShotTask) -> Result<f64> {
    let query = task.query().ok_or(CliError::MissingQuery)?;
    let means = task.class_means();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (c, samples) in query.iter().enumerate() {
        for z in samples.column_iter() {
            let z = z.into_owned();
            if nearest_index(z.as_slice(), means.iter().map(|m| m.as_slice())) == c {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(CliError::MissingQuery);
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::FeatureStore;

    fn store(classes: usize, per_class: usize) -> FeatureStore {
        let rows = (0..classes)
            .flat_map(|c| (0..per_class).map(move |i| (ClassLabel::Int(c as i64), vec![c as f64 * 100.0 + i as f64, i as f64])))
            .collect();
        FeatureStore::from_rows(rows).unwrap()
    }

    #[test]
    fn exact_pool_gives_the_unique_partition() {
        let s = store(3, 4);
        let ep = sample_episode(&s, 3, 2, 2, 0, 9).unwrap();
        for c in 0..3 {
            let mut all: Vec<f64> = ep.task.support()[c].row(0).iter().chain(ep.task.query().unwrap()[c].row(0).iter()).cloned().collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(all, s.pool(c).row(0).iter().cloned().collect::<Vec<_>>());
        }
        assert!(ep.low_confidence);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let s = store(6, 30);
        let a = sample_episodes(&s, 3, 5, 10, 4, 1).unwrap();
        assert_eq!(a, sample_episodes(&s, 3, 5, 10, 4, 1).unwrap());
        assert_ne!(a, sample_episodes(&s, 3, 5, 10, 4, 2).unwrap());
        for ep in &a {
            for (sup, q) in ep.task.support().iter().zip(ep.task.query().unwrap()) {
                for x in sup.row(0).iter() {
                    assert!(!q.row(0).iter().any(|y| y == x));
                }
            }
        }
    }

    #[test]
    fn pool_and_class_errors() {
        let s = store(3, 4);
        match sample_episode(&s, 3, 3, 2, 0, 0) {
            Err(CliError::InsufficientPool { needed: 5, available: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(sample_episode(&s, 4, 1, 1, 0, 0), Err(CliError::TooFewClasses { .. })));
    }

    #[test]
    fn separable_truth_is_one() {
        let s = store(3, 20);
        let ep = sample_episode(&s, 2, 3, 10, 0, 0).unwrap();
        assert_eq!(true_accuracy(&ep.task).unwrap(), 1.0);
        assert!(matches!(true_accuracy(&ep.task.without_query()), Err(CliError::MissingQuery)));
    }
}
