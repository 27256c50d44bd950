//! One-dimensional Gaussian kernel density estimation.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::seed;
use crate::{Error, Result};

/// Bandwidth used when the data has no spread (a single point, or ties).
pub const MIN_BANDWIDTH: f64 = 0.01;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianKde {
    points: Vec<f64>,
    bandwidth: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule, `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, with
/// [`MIN_BANDWIDTH`] when the spread term is zero.
pub fn silverman_bandwidth(points: &[f64]) -> f64 {
    let n = points.len();
    if n < 2 {
        return MIN_BANDWIDTH;
    }
    let mean = points.iter().sum::<f64>() / n as f64;
    let var = points.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = var.sqrt().min(iqr / 1.34);
    if spread > 0.0 {
        0.9 * spread * (n as f64).powf(-0.2)
    } else {
        MIN_BANDWIDTH
    }
}

impl GaussianKde {
    pub fn fit(points: &[f64]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot fit a KDE to zero points".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KDE points"));
        }
        Ok(Self {
            points: points.to_vec(),
            bandwidth: silverman_bandwidth(points),
        })
    }

    pub fn with_bandwidth(points: &[f64], bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        let mut kde = Self::fit(points)?;
        kde.bandwidth = bandwidth;
        Ok(kde)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .points
            .iter()
            .map(|p| {
                let u = (x - p) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        sum * INV_SQRT_2PI / (self.points.len() as f64 * h)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .points
            .iter()
            .map(|p| 0.5 * erfc(-(x - p) / (h * std::f64::consts::SQRT_2)))
            .sum();
        sum / self.points.len() as f64
    }

    /// `k` draws: a uniformly chosen point plus `N(0, h^2)` noise.
    pub fn sample(&self, k: usize, seed: u64) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        let mut rng = seed::rng_from(seed);
        Ok(self.sample_with(k, &mut rng))
    }

    pub fn sample_with(&self, k: usize, rng: &mut seed::Rng) -> Vec<f64> {
        (0..k)
            .map(|_| {
                let centre = self.points[rng.random_range(0..self.points.len())];
                let z: f64 = rng.sample(StandardNormal);
                centre + self.bandwidth * z
            })
            .collect()
    }
}

pub fn fit_kde(points: &[f64]) -> Result<GaussianKde> {
    GaussianKde::fit(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_uses_min_bandwidth() {
        let kde = fit_kde(&[0.5]).unwrap();
        assert_eq!(kde.bandwidth(), MIN_BANDWIDTH);
        let peak = kde.pdf(0.5);
        assert!((peak - INV_SQRT_2PI / MIN_BANDWIDTH).abs() < 1e-9);
        assert!(kde.pdf(0.49) < peak);
    }

    #[test]
    fn ties_use_min_bandwidth() {
        assert_eq!(fit_kde(&[0.9; 12]).unwrap().bandwidth(), MIN_BANDWIDTH);
    }

    #[test]
    fn pdf_examples() {
        let kde = GaussianKde::with_bandwidth(&[0.0], 1.0).unwrap();
        assert!((kde.pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        let sym = GaussianKde::with_bandwidth(&[-0.7, 0.7], 0.3).unwrap();
        for x in [0.1, 0.5, 1.3] {
            assert!((sym.pdf(x) - sym.pdf(-x)).abs() < 1e-15);
        }
        assert!(kde.pdf(11.0) < 1e-20);
        assert!((kde.cdf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn silverman_matches_hand_computation() {
        // sd = sqrt(2.5), IQR = 2 (type-7 quantiles 2 and 4), n = 5
        let pts = [1.0, 2.0, 3.0, 4.0, 5.0];
        let expected = 0.9 * (2.0f64 / 1.34).min(2.5f64.sqrt()) * 5f64.powf(-0.2);
        assert!((silverman_bandwidth(&pts) - expected).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_seeded_and_centred() {
        let kde = fit_kde(&[0.9, 0.91, 0.92]).unwrap();
        let a = kde.sample(100, 3).unwrap();
        assert_eq!(a, kde.sample(100, 3).unwrap());
        assert_ne!(a, kde.sample(100, 4).unwrap());
        assert!(kde.sample(0, 3).is_err());
        assert!(fit_kde(&[]).is_err());
    }
}
