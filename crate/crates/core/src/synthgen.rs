//! Synthetic longitudinal cohort generator.
//!
//! Features are drawn per column (from a KDE over seed samples, or from a
//! parametric distribution), min-max standardized to `[-1, 1]` and combined
//! linearly with `alpha` into a progression score. The first-follow-up label
//! is `score >= 0`. The second-follow-up label depends on the score range:
//!
//! | score range   | y2                                                 |
//! |---------------|----------------------------------------------------|
//! | `(1, inf)`    | 1                                                  |
//! | `(-inf, -1)`  | 1 for a random `p_extreme_low_to_progressive` share, else 0 |
//! | `[-1, 0)`     | 0                                                  |
//! | `[0, 1]`      | 0 for a random `p_moderate_pos_to_stable` share, else 1 |
//!
//! Shares are rounded to the nearest whole patient and drawn without
//! replacement.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::GaussianKde;
use crate::seed::{self, stream};
use crate::tabular::{Cohort, PatientRecord};
use crate::{Error, Result};

pub const DEFAULT_ALPHA: [f64; 5] = [0.4, 0.8, 0.5, 0.7, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum FeatureDistribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    Parametric { features: Vec<FeatureDistribution> },
    /// CSV with a header row and one column of seed values per feature.
    SeedSamples { path: PathBuf },
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::Parametric {
            features: vec![FeatureDistribution::Uniform { low: -1.0, high: 1.0 }; 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionRules {
    pub p_extreme_low_to_progressive: f64,
    pub p_moderate_pos_to_stable: f64,
}

impl Default for TransitionRules {
    fn default() -> Self {
        Self {
            p_extreme_low_to_progressive: 0.90,
            p_moderate_pos_to_stable: 0.50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub alpha: Vec<f64>,
    pub feature_source: FeatureSource,
    pub transition: TransitionRules,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 300,
            alpha: DEFAULT_ALPHA.to_vec(),
            feature_source: FeatureSource::default(),
            transition: TransitionRules::default(),
            seed: 0,
        }
    }
}

/// Resolved per-feature sampler.
enum Sampler {
    Kde(GaussianKde),
    Param(FeatureDistribution),
}

impl Sampler {
    fn draw(&self, n: usize, rng: &mut seed::Rng) -> Vec<f64> {
        match self {
            Sampler::Kde(kde) => kde.sample_with(n, rng),
            Sampler::Param(FeatureDistribution::Uniform { low, high }) => {
                (0..n).map(|_| low + (high - low) * rng.random::<f64>()).collect()
            }
            Sampler::Param(FeatureDistribution::Normal { mean, sd }) => (0..n)
                .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }
}

pub fn read_seed_samples(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, name) in names.iter().enumerate() {
            let text = record.get(c).unwrap_or("");
            if text.is_empty() {
                continue;
            }
            let v: f64 = text.parse().map_err(|_| Error::Parse {
                row: i + 2,
                column: name.clone(),
                message: format!("expected a number, found `{text}`"),
            })?;
            columns[c].push(v);
        }
    }
    Ok(names.into_iter().zip(columns).collect())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_shared()?;
        if let FeatureSource::Parametric { features } = &self.feature_source {
            self.check_alpha(features.len())?;
        }
        Ok(())
    }

    fn validate_shared(&self) -> Result<()> {
        if self.n_patients < 10 {
            return Err(Error::InvalidArgument(format!(
                "n_patients must be at least 10, got {}",
                self.n_patients
            )));
        }
        for p in [
            self.transition.p_extreme_low_to_progressive,
            self.transition.p_moderate_pos_to_stable,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "transition probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    fn check_alpha(&self, n_features: usize) -> Result<()> {
        if self.alpha.len() != n_features {
            return Err(Error::InvalidArgument(format!(
                "alpha has {} coefficients but there are {n_features} features",
                self.alpha.len()
            )));
        }
        Ok(())
    }
}

/// Builds the cohort described in the module docs.
pub fn generate(config: &SynthConfig) -> Result<Cohort> {
    config.validate()?;
    let samplers: Vec<(String, Sampler)> = match &config.feature_source {
        FeatureSource::Parametric { features } => features
            .iter()
            .enumerate()
            .map(|(i, f)| ((i + 1).to_string(), Sampler::Param(f.clone())))
            .collect(),
        FeatureSource::SeedSamples { path } => {
            let samples = read_seed_samples(path)?;
            return generate_from_samples(config, &samples);
        }
    };
    build(config, samplers)
}

/// [`generate`] with seed samples supplied in memory as `(name, values)`.
pub fn generate_from_samples(config: &SynthConfig, samples: &[(String, Vec<f64>)]) -> Result<Cohort> {
    config.validate_shared()?;
    config.check_alpha(samples.len())?;
    let mut samplers = Vec::with_capacity(samples.len());
    for (name, values) in samples {
        if values.len() < 10 {
            return Err(Error::InvalidArgument(format!(
                "feature `{name}` has {} seed samples, at least 10 are required",
                values.len()
            )));
        }
        if values.iter().all(|&v| v == values[0]) {
            return Err(Error::DegenerateFeature(name.clone()));
        }
        samplers.push((name.clone(), Sampler::Kde(GaussianKde::fit(values)?)));
    }
    build(config, samplers)
}

fn build(config: &SynthConfig, samplers: Vec<(String, Sampler)>) -> Result<Cohort> {
    let n = config.n_patients;
    let mut columns = Vec::with_capacity(samplers.len());
    for (f, (name, sampler)) in samplers.iter().enumerate() {
        let mut rng = seed::derived_rng(config.seed, stream::SYNTH_FEATURE, f as u64);
        let raw = sampler.draw(n, &mut rng);
        columns.push(standardize_symmetric(&raw).ok_or_else(|| Error::DegenerateFeature(name.clone()))?);
    }
    let scores: Vec<f64> = (0..n)
        .map(|i| columns.iter().zip(&config.alpha).map(|(c, a)| c[i] * a).sum())
        .collect();
    let y1: Vec<u8> = scores.iter().map(|&s| first_followup_label(s)).collect();
    let mut rng = seed::derived_rng(config.seed, stream::SYNTH_TRANSITION, 0);
    let y2 = second_followup_labels(&scores, &config.transition, &mut rng);

    let width = n.to_string().len().max(3);
    let patients = (0..n)
        .map(|i| PatientRecord {
            patient_id: format!("S{:0width$}", i + 1),
            baseline: columns.iter().map(|c| c[i]).collect(),
            fu1: None,
            covariates: Vec::new(),
            y1: y1[i],
            y2: y2[i],
        })
        .collect();
    Cohort::new(
        patients,
        samplers.into_iter().map(|(name, _)| name).collect(),
        Vec::new(),
        Vec::new(),
    )
}

/// `2 (x - min) / (max - min) - 1`; `None` for a constant column.
pub fn standardize_symmetric(values: &[f64]) -> Option<Vec<f64>> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range <= 0.0 {
        return None;
    }
    Some(
        values
            .iter()
            .map(|&v| {
                // Pin the extremes so they land on -1 and 1 exactly.
                if v == min {
                    -1.0
                } else if v == max {
                    1.0
                } else {
                    2.0 * (v - min) / range - 1.0
                }
            })
            .collect(),
    )
}

pub fn first_followup_label(score: f64) -> u8 {
    u8::from(score >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRange {
    ExtremeLow,
    ModerateNegative,
    ModeratePositive,
    ExtremeHigh,
}

/// Partition `(-inf, -1)`, `[-1, 0)`, `[0, 1]`, `(1, inf)`.
pub fn score_range(score: f64) -> ScoreRange {
    if score < -1.0 {
        ScoreRange::ExtremeLow
    } else if score < 0.0 {
        ScoreRange::ModerateNegative
    } else if score <= 1.0 {
        ScoreRange::ModeratePositive
    } else {
        ScoreRange::ExtremeHigh
    }
}

/// Applies the score-range transition rules.
pub fn second_followup_labels(scores: &[f64], rules: &TransitionRules, rng: &mut seed::Rng) -> Vec<u8> {
    let mut y2 = vec![0u8; scores.len()];
    let members = |range: ScoreRange| -> Vec<usize> {
        (0..scores.len()).filter(|&i| score_range(scores[i]) == range).collect()
    };
    for i in members(ScoreRange::ExtremeHigh) {
        y2[i] = 1;
    }

    let mut low = members(ScoreRange::ExtremeLow);
    let n_prog = (rules.p_extreme_low_to_progressive * low.len() as f64).round() as usize;
    low.shuffle(rng);
    for &i in &low[..n_prog] {
        y2[i] = 1;
    }

    let mut moderate = members(ScoreRange::ModeratePositive);
    let n_stable = (rules.p_moderate_pos_to_stable * moderate.len() as f64).round() as usize;
    moderate.shuffle(rng);
    for &i in &moderate[n_stable..] {
        y2[i] = 1;
    }
    y2
}

/// Counts of `(y1, y2)` pairs, indexed `[y1][y2]`.
pub fn transition_matrix(cohort: &Cohort) -> [[usize; 2]; 2] {
    let mut m = [[0; 2]; 2];
    for p in cohort.patients() {
        m[p.y1 as usize][p.y2 as usize] += 1;
    }
    m
}
