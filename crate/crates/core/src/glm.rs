//! L1-penalized logistic regression with per-sample weights.
//!
//! Minimizes
//!
//! ```text
//! J(w, b) = ||w||_1 + C * sum_i s_i * logloss(y_i, sigmoid(w . x_i + b))
//! ```
//!
//! with the intercept `b` unpenalized, so larger `C` means weaker
//! regularization. The solver is a proximal Newton method: each outer pass
//! builds the quadratic model of the smooth part at the current iterate,
//! minimizes model + L1 term by cyclic coordinate descent with
//! soft-thresholding, then backtracks along the resulting direction until
//! `J` decreases. `J` is therefore non-increasing across outer passes.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probabilities returned by [`LogisticModel::predict_proba`] lie in
/// `[PROBA_EPS, 1 - PROBA_EPS]`.
pub const PROBA_EPS: f64 = 1e-12;

const MAX_INNER_SWEEPS: usize = 500;
const INNER_TOL: f64 = 1e-13;
const MAX_BACKTRACKS: usize = 60;
const ARMIJO: f64 = 1e-4;

/// Non-negative per-sample weights, not all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "sample weights must be finite and non-negative".into(),
            ));
        }
        if !w.iter().any(|&v| v > 0.0) {
            return Err(Error::InvalidArgument("sample weights are all zero".into()));
        }
        Ok(Self(w))
    }

    pub fn unit(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub c: f64,
    /// Relative objective decrease between outer passes that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub c: f64,
    pub converged: bool,
    pub n_iters: usize,
    /// Intercept-only fit: the target had a single class, or no column varied.
    pub degenerate: bool,
    /// Objective value at the returned solution.
    pub objective: f64,
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_function(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| linear(&self.weights, self.intercept, row.iter().copied()))
            .collect())
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self
            .decision_function(x)?
            .into_iter()
            .map(|z| sigmoid(z).clamp(PROBA_EPS, 1.0 - PROBA_EPS))
            .collect())
    }

    /// `1` where `proba >= threshold`.
    pub fn predict_label(&self, x: ArrayView2<'_, f64>, threshold: f64) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| threshold_label(p, threshold))
            .collect())
    }
}

pub fn threshold_label(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn linear(w: &[f64], b: f64, x: impl Iterator<Item = f64>) -> f64 {
    b + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
}

/// Binary cross-entropy of a logit `z` against label `y`.
fn logit_loss(z: f64, y: u8) -> f64 {
    softplus(z) - if y == 1 { z } else { 0.0 }
}

/// The penalized objective `J(w, b)`.
pub fn objective(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    sample_weights: &[f64],
    c: f64,
    weights: &[f64],
    intercept: f64,
) -> f64 {
    let smooth: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .zip(sample_weights)
        .map(|((row, &yi), &si)| si * logit_loss(linear(weights, intercept, row.iter().copied()), yi))
        .sum();
    weights.iter().map(|w| w.abs()).sum::<f64>() + c * smooth
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

pub fn fit_l1_logistic(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    sample_weights: &SampleWeights,
    options: &FitOptions,
) -> Result<LogisticModel> {
    fit_l1_logistic_traced(x, y, sample_weights, options).map(|(model, _)| model)
}

/// Like [`fit_l1_logistic`], also returning the objective after every outer
/// pass (first entry: the starting point).
pub fn fit_l1_logistic_traced(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    sample_weights: &SampleWeights,
    options: &FitOptions,
) -> Result<(LogisticModel, Vec<f64>)> {
    let (n, d) = x.dim();
    let s = sample_weights.as_slice();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if s.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "at least two training rows are required".into(),
        ));
    }
    if !(options.c.is_finite() && options.c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "C must be positive, got {}",
            options.c
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix"));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let c = options.c;

    let total: f64 = s.iter().sum();
    let positive: f64 = y.iter().zip(s).filter(|(&yi, _)| yi == 1).map(|(_, &si)| si).sum();
    let rate = (positive / total).clamp(PROBA_EPS, 1.0 - PROBA_EPS);
    let mut w = vec![0.0; d];
    let mut b = logit(rate);

    let single_class = positive <= 0.0 || positive >= total;
    let informative = (0..d).any(|j| {
        let col = x.column(j);
        col.iter().any(|&v| v != col[0])
    });
    if single_class || !informative {
        // Intercept-only problem; b = logit(rate) is its exact minimizer.
        let obj = objective(x, y, s, c, &w, b);
        let model = LogisticModel {
            weights: w,
            intercept: b,
            c,
            converged: true,
            n_iters: 0,
            degenerate: true,
            objective: obj,
        };
        return Ok((model, vec![obj]));
    }

    let col_sq: Vec<Vec<f64>> = (0..d)
        .map(|j| x.column(j).iter().map(|v| v * v).collect())
        .collect();

    let mut obj = objective(x, y, s, c, &w, b);
    let mut history = vec![obj];
    let mut converged = false;
    let mut n_iters = 0;

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut r = vec![0.0; n];

    for iter in 1..=options.max_iter {
        n_iters = iter;
        for (i, row) in x.rows().into_iter().enumerate() {
            let p = sigmoid(linear(&w, b, row.iter().copied()));
            grad[i] = c * s[i] * (p - f64::from(y[i]));
            // Floor keeps the model strictly convex along saturated directions.
            hess[i] = (c * s[i] * p * (1.0 - p)).max(1e-12 * c * s[i]);
        }
        let curvature: Vec<f64> = col_sq
            .iter()
            .map(|sq| sq.iter().zip(&hess).map(|(a, h)| a * h).sum())
            .collect();
        let hess_sum: f64 = hess.iter().sum();

        let mut dw = vec![0.0; d];
        let mut db = 0.0;
        r.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..MAX_INNER_SWEEPS {
            let mut max_change: f64 = 0.0;

            let gb: f64 = grad.iter().zip(&hess).zip(&r).map(|((g, h), r)| g + h * r).sum();
            let step = -gb / hess_sum;
            db += step;
            r.iter_mut().for_each(|v| *v += step);
            max_change = max_change.max(step.abs());

            for j in 0..d {
                let current = w[j] + dw[j];
                let a = curvature[j];
                let target = if a <= 1e-300 {
                    0.0
                } else {
                    let col = x.column(j);
                    let gj: f64 = col
                        .iter()
                        .zip(grad.iter().zip(&hess).zip(&r))
                        .map(|(xij, ((g, h), r))| (g + h * r) * xij)
                        .sum();
                    soft_threshold(a * current - gj, 1.0) / a
                };
                let delta = target - current;
                if delta != 0.0 {
                    dw[j] += delta;
                    for (ri, xij) in r.iter_mut().zip(x.column(j)) {
                        *ri += delta * xij;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < INNER_TOL {
                break;
            }
        }

        let l1 = |v: &[f64]| v.iter().map(|a| a.abs()).sum::<f64>();
        let stepped: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + b).collect();
        let descent = grad.iter().zip(&r).map(|(g, r)| g * r).sum::<f64>() + l1(&stepped) - l1(&w);
        if descent >= 0.0 {
            converged = true;
            break;
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand_w: Vec<f64> = w.iter().zip(&dw).map(|(a, b)| a + t * b).collect();
            let cand_b = b + t * db;
            let cand_obj = objective(x, y, s, c, &cand_w, cand_b);
            if cand_obj <= obj + ARMIJO * t * descent {
                accepted = Some((cand_w, cand_b, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((new_w, new_b, new_obj)) = accepted else {
            // No decrease representable in floating point: at the optimum.
            converged = true;
            break;
        };
        debug_assert!(new_obj <= obj);
        let rel = (obj - new_obj) / obj.max(f64::MIN_POSITIVE);
        w = new_w;
        b = new_b;
        obj = new_obj;
        history.push(obj);
        if rel < options.tol && t == 1.0 {
            converged = true;
            break;
        }
    }

    let model = LogisticModel {
        weights: w,
        intercept: b,
        c,
        converged,
        n_iters,
        degenerate: false,
        objective: obj,
    };
    Ok((model, history))
}
