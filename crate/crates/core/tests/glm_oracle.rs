use longit_core::glm::{self, FitOptions, LogisticModel, SampleWeights};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Unpenalized gradient `C * sum_i s_i (p_i - y_i) [x_i, 1]`.
fn smooth_gradient(x: &Array2<f64>, y: &[u8], s: &[f64], c: f64, m: &LogisticModel) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; x.ncols()];
    let mut gb = 0.0;
    for (i, row) in x.rows().into_iter().enumerate() {
        let z = m.intercept + row.iter().zip(&m.weights).map(|(a, b)| a * b).sum::<f64>();
        let r = s[i] * (sigmoid(z) - f64::from(y[i]));
        for (g, v) in gw.iter_mut().zip(row) {
            *g += c * r * v;
        }
        gb += c * r;
    }
    (gw, gb)
}

fn kkt_residual(x: &Array2<f64>, y: &[u8], s: &[f64], c: f64, m: &LogisticModel) -> f64 {
    let (gw, gb) = smooth_gradient(x, y, s, c, m);
    let mut worst = gb.abs();
    for (g, w) in gw.iter().zip(&m.weights) {
        let r = if *w == 0.0 { (g.abs() - 1.0).max(0.0) } else { (g + w.signum()).abs() };
        worst = worst.max(r);
    }
    worst
}

fn random_problem(rng: &mut ChaCha8Rng, d: usize) -> (Array2<f64>, Vec<u8>, Vec<f64>) {
    let n = rng.random_range(8..=30);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut y: Vec<u8> = (0..n)
        .map(|i| {
            let z: f64 = (0..d).map(|j| x[[i, j]] * beta[j]).sum();
            u8::from(rng.random::<f64>() < sigmoid(z))
        })
        .collect();
    y[0] = 0;
    y[1] = 1;
    let s = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    (x, y, s)
}

/// Coarse grid followed by a finer grid around the best coarse point.
fn grid_minimum(x: &Array2<f64>, y: &[u8], s: &[f64], c: f64) -> f64 {
    let d = x.ncols();
    let eval = |w: &[f64], b: f64| glm::objective(x.view(), y, s, c, w, b);
    let mut best = (f64::INFINITY, vec![0.0; d], 0.0);
    let search = |centre: &(f64, Vec<f64>, f64), half: f64, steps: i32, best: &mut (f64, Vec<f64>, f64)| {
        let step = half / steps as f64;
        let axis = |k: i32| k as f64 * step;
        let w1s: Vec<f64> = (-steps..=steps).map(|k| centre.1[0] + axis(k)).collect();
        let w2s: Vec<f64> = if d == 2 {
            (-steps..=steps).map(|k| centre.1[1] + axis(k)).collect()
        } else {
            vec![0.0]
        };
        for &w1 in &w1s {
            for &w2 in &w2s {
                for kb in -steps..=steps {
                    let b = centre.2 + axis(kb);
                    let w = if d == 2 { vec![w1, w2] } else { vec![w1] };
                    let v = eval(&w, b);
                    if v < best.0 {
                        *best = (v, w, b);
                    }
                }
            }
        }
    };
    search(&(0.0, vec![0.0; d], 0.0), 8.0, 40, &mut best);
    let coarse = best.clone();
    search(&coarse, 0.4, 40, &mut best);
    let fine = best.clone();
    search(&fine, 0.02, 20, &mut best);
    best.0
}

#[test]
fn solver_matches_grid_search_and_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let d = 1 + trial % 2;
        let (x, y, s) = random_problem(&mut rng, d);
        let c = 1.0;
        let model = glm::fit_l1_logistic(x.view(), &y, &SampleWeights::new(s.clone()).unwrap(), &FitOptions::default())
            .unwrap();
        let grid = grid_minimum(&x, &y, &s, c);
        assert!(model.objective <= grid + 1e-3, "trial {trial}: {} vs grid {grid}", model.objective);
        let kkt = kkt_residual(&x, &y, &s, c, &model);
        assert!(kkt <= 1e-4, "trial {trial}: KKT residual {kkt}");
    }
}

#[test]
fn smooth_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, y, s) = random_problem(&mut rng, 2);
    let m = LogisticModel {
        weights: vec![0.7, -1.3],
        intercept: 0.2,
        c: 2.0,
        converged: true,
        n_iters: 0,
        degenerate: false,
        objective: 0.0,
    };
    let (gw, gb) = smooth_gradient(&x, &y, &s, 2.0, &m);
    // Away from w = 0 the L1 term is linear, so its derivative is sign(w).
    let f = |w: &[f64], b: f64| glm::objective(x.view(), &y, &s, 2.0, w, b);
    let h = 1e-6;
    for j in 0..2 {
        let mut plus = m.weights.clone();
        let mut minus = m.weights.clone();
        plus[j] += h;
        minus[j] -= h;
        let fd = (f(&plus, m.intercept) - f(&minus, m.intercept)) / (2.0 * h);
        assert!((fd - (gw[j] + m.weights[j].signum())).abs() < 1e-5);
    }
    let fd = (f(&m.weights, m.intercept + h) - f(&m.weights, m.intercept - h)) / (2.0 * h);
    assert!((fd - gb).abs() < 1e-5);
}

#[test]
fn row_permutation_does_not_change_the_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, y, s) = random_problem(&mut rng, 2);
    let opts = FitOptions::default();
    let a = glm::fit_l1_logistic(x.view(), &y, &SampleWeights::new(s.clone()).unwrap(), &opts).unwrap();
    let order: Vec<usize> = (0..y.len()).rev().collect();
    let xp = x.select(ndarray::Axis(0), &order);
    let yp: Vec<u8> = order.iter().map(|&i| y[i]).collect();
    let sp: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let b = glm::fit_l1_logistic(xp.view(), &yp, &SampleWeights::new(sp).unwrap(), &opts).unwrap();
    for (u, v) in a.weights.iter().zip(&b.weights) {
        assert!((u - v).abs() < 1e-4);
    }
    assert!((a.objective - b.objective).abs() < 1e-8);
}

#[test]
fn stronger_penalty_shrinks_the_l1_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (x, y, s) = random_problem(&mut rng, 2);
    let w = SampleWeights::new(s).unwrap();
    let norm = |c: f64| {
        let m = glm::fit_l1_logistic(x.view(), &y, &w, &FitOptions { c, ..FitOptions::default() }).unwrap();
        m.weights.iter().map(|v| v.abs()).sum::<f64>()
    };
    assert!(norm(0.1) <= norm(1.0) + 1e-9);
    assert!(norm(1.0) <= norm(10.0) + 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_never_increases(seed in any::<u64>(), d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, s) = random_problem(&mut rng, d);
        let (model, history) = glm::fit_l1_logistic_traced(
            x.view(), &y, &SampleWeights::new(s).unwrap(), &FitOptions::default()).unwrap();
        for pair in history.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
        for p in model.predict_proba(x.view()).unwrap() {
            prop_assert!((glm::PROBA_EPS..=1.0 - glm::PROBA_EPS).contains(&p));
        }
    }

    #[test]
    fn labels_follow_the_threshold(p in 0.0f64..=1.0, t in 0.01f64..0.99) {
        prop_assert_eq!(glm::threshold_label(p, t) == 1, p >= t);
    }
}
