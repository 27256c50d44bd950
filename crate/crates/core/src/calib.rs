//! Calibration metrics, isotonic calibration and reliability curves.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOG_LOSS_EPS: f64 = 1e-15;

fn check_lengths(p: &[f64], y: &[u8]) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: y.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty probability vector".into()));
    }
    Ok(())
}

/// Mean squared difference between probabilities and outcomes.
pub fn brier_score(p: &[f64], y: &[u8]) -> Result<f64> {
    check_lengths(p, y)?;
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "Brier score needs probabilities in [0, 1]".into(),
        ));
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| (pi - f64::from(yi)).powi(2))
        .sum();
    Ok(sum / p.len() as f64)
}

/// Binary cross-entropy with `p` clipped to `[eps, 1 - eps]`.
pub fn log_loss(p: &[f64], y: &[u8], eps: f64) -> Result<f64> {
    check_lengths(p, y)?;
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&pi, &yi)| {
            let pi = pi.clamp(eps, 1.0 - eps);
            if yi == 1 {
                -pi.ln()
            } else {
                -(1.0 - pi).ln()
            }
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// Monotone non-decreasing map, linear between knots and flat outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
}

impl IsotonicMap {
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter().map(|&v| self.eval(v)).collect()
    }

    pub fn eval(&self, v: f64) -> f64 {
        let xs = &self.knots_x;
        let ys = &self.knots_y;
        let last = xs.len() - 1;
        if v <= xs[0] {
            return ys[0];
        }
        if v >= xs[last] {
            return ys[last];
        }
        // First knot strictly greater than v; v lies in [xs[hi-1], xs[hi]).
        let hi = xs.partition_point(|&k| k <= v);
        let lo = hi - 1;
        let t = (v - xs[lo]) / (xs[hi] - xs[lo]);
        ys[lo] + t * (ys[hi] - ys[lo])
    }
}

/// Weighted pool-adjacent-violators on values already ordered by the
/// predictor. Returns one fitted value per input.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // Each block: (weighted mean, total weight, number of inputs).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let total = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / total, total, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Least-squares non-decreasing fit of `y` against `p`. Tied `p` values are
/// pooled first, so every knot is a distinct probability.
pub fn fit_isotonic(p: &[f64], y: &[u8]) -> Result<IsotonicMap> {
    check_lengths(p, y)?;
    if p.len() < 2 {
        return Err(Error::InvalidArgument(
            "isotonic calibration needs at least 2 points".into(),
        ));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("isotonic input"));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));

    let mut knots_x: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for &i in &order {
        if knots_x.last() == Some(&p[i]) {
            *sums.last_mut().unwrap() += f64::from(y[i]);
            *counts.last_mut().unwrap() += 1.0;
        } else {
            knots_x.push(p[i]);
            sums.push(f64::from(y[i]));
            counts.push(1.0);
        }
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / c).collect();
    let knots_y = pava(&means, &counts);
    Ok(IsotonicMap { knots_x, knots_y })
}

pub fn apply_isotonic(map: &IsotonicMap, p: &[f64]) -> Vec<f64> {
    map.apply(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub mean_predicted: f64,
    pub fraction_positive: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCurve {
    pub bins: Vec<ReliabilityBin>,
}

/// Uniform bins over `[0, 1]`, last bin closed on the right; empty bins are
/// left out.
pub fn reliability_curve(p: &[f64], y: &[u8], n_bins: usize) -> Result<ReliabilityCurve> {
    check_lengths(p, y)?;
    if n_bins < 2 {
        return Err(Error::InvalidArgument("n_bins must be at least 2".into()));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&pi, &yi) in p.iter().zip(y) {
        let b = ((pi.clamp(0.0, 1.0) * n_bins as f64).floor() as usize).min(n_bins - 1);
        sum_p[b] += pi;
        sum_y[b] += f64::from(yi);
        count[b] += 1;
    }
    let bins = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| ReliabilityBin {
            mean_predicted: sum_p[b] / count[b] as f64,
            fraction_positive: sum_y[b] / count[b] as f64,
            count: count[b],
        })
        .collect();
    Ok(ReliabilityCurve { bins })
}
