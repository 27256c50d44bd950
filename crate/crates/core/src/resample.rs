//! Class-imbalance handling: inverse-frequency sample weights and SMOTE.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::glm::SampleWeights;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceKind {
    None,
    InverseFrequency,
    Smote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImbalanceStrategy {
    pub kind: ImbalanceKind,
    pub smote_k: usize,
    /// Target minority/majority ratio after oversampling.
    pub smote_target_ratio: f64,
    pub seed: u64,
}

impl Default for ImbalanceStrategy {
    fn default() -> Self {
        Self {
            kind: ImbalanceKind::InverseFrequency,
            smote_k: 5,
            smote_target_ratio: 1.0,
            seed: 0,
        }
    }
}

impl ImbalanceStrategy {
    pub fn with_kind(kind: ImbalanceKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

fn class_counts(y: &[u8]) -> [usize; 2] {
    let ones = y.iter().filter(|&&v| v == 1).count();
    [y.len() - ones, ones]
}

/// `s_i = n / (2 * n_class(y_i))`, so the weights sum to `n`.
pub fn inverse_frequency_weights(y: &[u8]) -> Result<SampleWeights> {
    let counts = class_counts(y);
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::InvalidArgument(
            "inverse-frequency weights need both classes present".into(),
        ));
    }
    let n = y.len() as f64;
    let per_class = [n / (2.0 * counts[0] as f64), n / (2.0 * counts[1] as f64)];
    SampleWeights::new(y.iter().map(|&v| per_class[v as usize]).collect())
}

/// Appends synthetic minority rows until the minority count reaches
/// `round(target_ratio * majority)`. Original rows come first, unchanged.
///
/// Each synthetic row is `x + u * (x_nb - x)` with `x` a uniformly drawn
/// minority row, `x_nb` one of its `k` nearest minority neighbours (Euclidean,
/// ties to the lower row index) and `u ~ U[0, 1]`.
pub fn smote_oversample(
    x: ArrayView2<'_, f64>,
    y: &[u8],
    strategy: &ImbalanceStrategy,
) -> Result<(Array2<f64>, Vec<u8>)> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if strategy.smote_k == 0 {
        return Err(Error::InvalidArgument("smote_k must be at least 1".into()));
    }
    let counts = class_counts(y);
    let minority_label: u8 = if counts[1] < counts[0] { 1 } else { 0 };
    let n_min = counts[minority_label as usize];
    let n_maj = counts[1 - minority_label as usize];
    if n_min < 2 {
        return Err(Error::InvalidArgument(format!(
            "SMOTE needs at least 2 minority rows, found {n_min}"
        )));
    }
    let target = (strategy.smote_target_ratio * n_maj as f64).round() as usize;
    let n_new = target.saturating_sub(n_min);

    let d = x.ncols();
    let mut out_x = Array2::zeros((x.nrows() + n_new, d));
    out_x.slice_mut(ndarray::s![..x.nrows(), ..]).assign(&x);
    let mut out_y = y.to_vec();
    if n_new == 0 {
        return Ok((out_x, out_y));
    }

    let minority: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority_label).collect();
    let k = strategy.smote_k.min(n_min - 1);
    let neighbours: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            let mut dists: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| {
                    let dist: f64 = x
                        .row(i)
                        .iter()
                        .zip(x.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (dist, j)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();

    let mut rng = seed::rng_from(strategy.seed);
    for r in 0..n_new {
        let a = rng.random_range(0..minority.len());
        let nb = neighbours[a][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let base = x.row(minority[a]);
        let other = x.row(nb);
        let mut row = out_x.row_mut(x.nrows() + r);
        for j in 0..d {
            row[j] = base[j] + u * (other[j] - base[j]);
        }
        out_y.push(minority_label);
    }
    Ok((out_x, out_y))
}
