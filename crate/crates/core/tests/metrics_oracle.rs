use longit_core::metrics::{self, Metric, SkillScores};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pair_count_auc(p: &[f64], y: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = p.iter().zip(y).filter(|(_, &v)| v == 1).map(|(&q, _)| q).collect();
    let neg: Vec<f64> = p.iter().zip(y).filter(|(_, &v)| v == 0).map(|(&q, _)| q).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for a in &pos {
        for b in &neg {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() as f64 * neg.len() as f64))
}

/// Area under the empirical ROC curve by the trapezoid rule, thresholds at
/// every distinct score.
fn trapezoid_auc(p: &[f64], y: &[u8]) -> f64 {
    let n_pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let n_neg = y.len() as f64 - n_pos;
    let mut thresholds: Vec<f64> = p.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = p.iter().zip(y).filter(|(&q, &v)| q >= t && v == 1).count() as f64;
        let fp = p.iter().zip(y).filter(|(&q, &v)| q >= t && v == 0).count() as f64;
        points.push((fp / n_neg, tp / n_pos));
    }
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

#[test]
fn auc_matches_pair_counting_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let levels = rng.random_range(2..12);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        assert_eq!(metrics::roc_auc(&p, &y), pair_count_auc(&p, &y));
        if let Some(auc) = metrics::roc_auc(&p, &y) {
            assert!((auc - trapezoid_auc(&p, &y)).abs() < 1e-12);
        }
    }
}

#[test]
fn summaries_skip_undefined_splits() {
    let defined = metrics::skill_scores(&[0, 1], &[0, 1], &[0.2, 0.8]).unwrap();
    let one_class = metrics::skill_scores(&[1, 1], &[1, 0], &[0.9, 0.4]).unwrap();
    assert_eq!(one_class.roc_auc, None);
    assert_eq!(one_class.specificity, None);
    let s = metrics::summarize_across_splits(&[defined, defined, one_class]).unwrap();
    assert_eq!(s.roc_auc.n, 2);
    assert_eq!(s.roc_auc.n_excluded, 1);
    assert_eq!(s.accuracy.n, 3);
}

#[test]
fn isotropic_cloud_splits_variance_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Array2::from_shape_fn((4000, 3), |_| rng.random_range(-1.0..1.0));
    let pca = metrics::pca_project(x.view()).unwrap();
    let share = pca.total_variance / 3.0;
    for v in pca.explained_variance {
        assert!((v - share).abs() / share < 0.1);
    }
}

#[test]
fn projection_is_centred_and_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Array2::from_shape_fn((50, 4), |(_, j)| rng.random_range(-1.0..1.0) * (j + 1) as f64);
    let pca = metrics::pca_project(x.view()).unwrap();
    let c = &pca.components;
    for k in 0..2 {
        assert!((c.row(k).dot(&c.row(k)) - 1.0).abs() < 1e-9);
        let col_mean = pca.projection.column(k).sum() / 50.0;
        assert!(col_mean.abs() < 1e-9);
    }
    assert!(c.row(0).dot(&c.row(1)).abs() < 1e-9);
    assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
}

fn scores_strategy() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<f64>)> {
    (1usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..=1, n),
            prop::collection::vec(0u8..=1, n),
            prop::collection::vec(0.0f64..=1.0, n),
        )
    })
}

proptest! {
    #[test]
    fn skill_scores_are_rates((y, pred, p) in scores_strategy()) {
        let s = metrics::skill_scores(&y, &pred, &p).unwrap();
        for m in Metric::ALL {
            if let Some(v) = s.get(m) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let both = y.contains(&0) && y.contains(&1);
        prop_assert_eq!(s.balanced_accuracy.is_some(), both);
        prop_assert_eq!(s.roc_auc.is_some(), both);
    }

    #[test]
    fn ci_brackets_the_mean(values in prop::collection::vec(0.0f64..=1.0, 2..50)) {
        let s = metrics::summarize_metric(&values, 0).unwrap();
        prop_assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
        prop_assert!(((s.ci_high - s.mean) - (s.mean - s.ci_low)).abs() < 1e-12);
    }

    #[test]
    fn mean_of_identical_scores_is_identity((y, pred, p) in scores_strategy(), k in 1usize..6) {
        let s = metrics::skill_scores(&y, &pred, &p).unwrap();
        let m = SkillScores::mean_of(&vec![s; k]).unwrap();
        for metric in Metric::ALL {
            match (s.get(metric), m.get(metric)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps(
        data in prop::collection::vec((0.0f64..=1.0, 0u8..=1), 2..60),
    ) {
        let (p, y): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
        let q: Vec<f64> = p.iter().map(|v| v * v * 0.5 + 0.1).collect();
        prop_assert_eq!(metrics::roc_auc(&p, &y), metrics::roc_auc(&q, &y));
    }
}
