//! Skill scores, across-split summaries with normal-approximation CIs, ROC-AUC
//! and a two-component PCA for cohort overview plots.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    BalancedAccuracy,
    Recall,
    Specificity,
    RocAuc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Accuracy,
        Metric::BalancedAccuracy,
        Metric::Recall,
        Metric::Specificity,
        Metric::RocAuc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::Recall => "recall",
            Metric::Specificity => "specificity",
            Metric::RocAuc => "roc_auc",
        }
    }
}

/// Scores on one test set. `None` marks a rate that is undefined because the
/// test set lacks one of the classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillScores {
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub roc_auc: Option<f64>,
    pub n: usize,
}

impl SkillScores {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => self.accuracy,
            Metric::BalancedAccuracy => self.balanced_accuracy,
            Metric::Recall => self.recall,
            Metric::Specificity => self.specificity,
            Metric::RocAuc => self.roc_auc,
        }
    }

    fn set(&mut self, metric: Metric, value: Option<f64>) {
        match metric {
            Metric::Accuracy => self.accuracy = value,
            Metric::BalancedAccuracy => self.balanced_accuracy = value,
            Metric::Recall => self.recall = value,
            Metric::Specificity => self.specificity = value,
            Metric::RocAuc => self.roc_auc = value,
        }
    }

    /// Per-metric arithmetic mean over a batch of score vectors, skipping
    /// undefined entries.
    pub fn mean_of(scores: &[SkillScores]) -> Result<SkillScores> {
        let first = scores
            .first()
            .ok_or_else(|| Error::InvalidArgument("no scores to average".into()))?;
        let mut out = *first;
        for metric in Metric::ALL {
            let values: Vec<f64> = scores.iter().filter_map(|s| s.get(metric)).collect();
            let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
            out.set(metric, mean);
        }
        Ok(out)
    }
}

pub fn skill_scores(y_true: &[u8], y_pred: &[u8], proba: &[f64]) -> Result<SkillScores> {
    let n = y_true.len();
    if y_pred.len() != n || proba.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if y_pred.len() != n { y_pred.len() } else { proba.len() },
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 0) => tn += 1,
            (0, _) => fp += 1,
            _ => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let recall = ratio(tp, tp + fneg);
    let specificity = ratio(tn, tn + fp);
    let balanced_accuracy = match (recall, specificity) {
        (Some(r), Some(s)) => Some((r + s) / 2.0),
        _ => None,
    };
    Ok(SkillScores {
        accuracy: Some((tp + tn) as f64 / n as f64),
        balanced_accuracy,
        recall,
        specificity,
        roc_auc: roc_auc(proba, y_true),
        n,
    })
}

/// Normalized Mann-Whitney statistic: the fraction of (positive, negative)
/// pairs ranked correctly, ties counting one half. `None` without both
/// classes.
pub fn roc_auc(proba: &[f64], y_true: &[u8]) -> Option<f64> {
    let n_pos = y_true.iter().filter(|&&v| v == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..proba.len()).collect();
    order.sort_by(|&a, &b| proba[a].total_cmp(&proba[b]));
    // Sum of positive mid-ranks (1-based).
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && proba[order[end]] == proba[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| y_true[i] == 1).count();
        rank_sum += mid_rank * positives as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Splits contributing to this metric.
    pub n: usize,
    /// Splits skipped because the metric was undefined there.
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub accuracy: MetricSummary,
    pub balanced_accuracy: MetricSummary,
    pub recall: MetricSummary,
    pub specificity: MetricSummary,
    pub roc_auc: MetricSummary,
    pub n_splits: usize,
}

impl ScoreSummary {
    pub fn get(&self, metric: Metric) -> &MetricSummary {
        match metric {
            Metric::Accuracy => &self.accuracy,
            Metric::BalancedAccuracy => &self.balanced_accuracy,
            Metric::Recall => &self.recall,
            Metric::Specificity => &self.specificity,
            Metric::RocAuc => &self.roc_auc,
        }
    }
}

const Z_95: f64 = 1.96;

/// `mean ± 1.96 * sd / sqrt(m)` per metric, sd with an `m - 1` denominator.
pub fn summarize_metric(values: &[f64], n_excluded: usize) -> Result<MetricSummary> {
    let m = values.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 splits with a defined value, found {m}"
        )));
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let half = Z_95 * var.sqrt() / (m as f64).sqrt();
    Ok(MetricSummary {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n: m,
        n_excluded,
    })
}

pub fn summarize_across_splits(per_split: &[SkillScores]) -> Result<ScoreSummary> {
    let summary = |metric: Metric| -> Result<MetricSummary> {
        let values: Vec<f64> = per_split.iter().filter_map(|s| s.get(metric)).collect();
        let excluded = per_split.len() - values.len();
        summarize_metric(&values, excluded).map_err(|e| {
            Error::InvalidArgument(format!("{}: {e}", metric.name()))
        })
    };
    Ok(ScoreSummary {
        accuracy: summary(Metric::Accuracy)?,
        balanced_accuracy: summary(Metric::BalancedAccuracy)?,
        recall: summary(Metric::Recall)?,
        specificity: summary(Metric::Specificity)?,
        roc_auc: summary(Metric::RocAuc)?,
        n_splits: per_split.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// `n × 2` scores.
    pub projection: Array2<f64>,
    /// Variance along each component (sample covariance eigenvalues).
    pub explained_variance: [f64; 2],
    /// `2 × d` unit loadings.
    pub components: Array2<f64>,
    pub total_variance: f64,
}

const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matching eigenvectors as columns.
pub fn symmetric_eigen(matrix: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
    let d = matrix.nrows();
    let mut a = matrix.to_owned();
    let mut v = Array2::<f64>::eye(d);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| a[[i, i]]).collect(), v)
}

/// Projects mean-centred rows onto the top two covariance eigenvectors. Each
/// component's largest-magnitude loading is made positive.
pub fn pca_project(x: ArrayView2<'_, f64>) -> Result<Pca> {
    let (n, d) = x.dim();
    if n < 3 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 3 rows and 2 columns, got {n}×{d}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input"));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let centred = Array2::from_shape_fn((n, d), |(i, j)| x[[i, j]] - mean[j]);
    let cov = centred.t().dot(&centred) / (n - 1) as f64;
    let total_variance: f64 = cov.diag().sum();

    let (values, vectors) = symmetric_eigen(cov.view());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let rank_floor = 1e-12 * total_variance.max(f64::MIN_POSITIVE);
    let mut components = Array2::zeros((2, d));
    let mut explained = [0.0; 2];
    for (c, &idx) in order.iter().take(2).enumerate() {
        if values[idx] <= rank_floor {
            continue;
        }
        let mut loading: Vec<f64> = vectors.column(idx).to_vec();
        let (mut best, mut best_abs) = (0, -1.0);
        for (j, &l) in loading.iter().enumerate() {
            if l.abs() > best_abs + 1e-12 {
                best = j;
                best_abs = l.abs();
            }
        }
        if loading[best] < 0.0 {
            loading.iter_mut().for_each(|l| *l = -*l);
        }
        components.row_mut(c).assign(&ndarray::Array1::from(loading));
        explained[c] = values[idx];
    }
    let projection = centred.dot(&components.t());
    Ok(Pca {
        projection,
        explained_variance: explained,
        components,
        total_variance,
    })
}
