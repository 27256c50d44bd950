//! Experiment configuration and the end-to-end run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{
    build_patient_densities, run_benchmark, run_longitudinal, run_step1, sample_intermediate_labels,
    step1_outcome, IntermediateLabels, ModelName, ModelOutcome, ModelSpec, PipelineSettings,
    Step1Output, Target,
};
use crate::calib::{self, ReliabilityCurve, LOG_LOSS_EPS};
use crate::density::GaussianKde;
use crate::glm::FitOptions;
use crate::metrics::{self, ScoreSummary};
use crate::resample::{ImbalanceKind, ImbalanceStrategy};
use crate::seed::{self, stream};
use crate::synthgen::{self, SynthConfig};
use crate::tabular::{self, Cohort, ColumnSchema, SplitConfig};
use crate::{Error, Result};

pub const DEFAULT_SPLITS_SYNTHETIC: usize = 230;
pub const DEFAULT_SPLITS_REAL: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Cohort CSV on disk.
    Path(PathBuf),
    /// Synthetic cohort; its seed is replaced by the experiment seed.
    Synth(SynthConfig),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synth(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRequest {
    pub name: ModelName,
    /// Falls back to the dataset default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imbalance: Option<ImbalanceStrategy>,
    #[serde(default)]
    pub include_covariates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// `None` selects the default roster for the dataset.
    pub models: Option<Vec<ModelRequest>>,
    pub n_splits: Option<usize>,
    pub test_fraction: f64,
    pub k_samples: usize,
    pub threshold: f64,
    #[serde(alias = "C")]
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub min_occurrences: usize,
    pub max_retries: usize,
    pub seed: u64,
    pub covariate_columns: Vec<String>,
    pub out_dir: PathBuf,
    pub reliability_bins: usize,
    pub kde_grid_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            dataset: DatasetSource::default(),
            models: None,
            n_splits: None,
            test_fraction: 0.4,
            k_samples: 100,
            threshold: 0.5,
            c: fit.c,
            tol: fit.tol,
            max_iter: fit.max_iter,
            min_occurrences: 5,
            max_retries: 20,
            seed: 0,
            covariate_columns: Vec::new(),
            out_dir: PathBuf::from("out"),
            reliability_bins: 10,
            kde_grid_points: 101,
        }
    }
}

impl ExperimentConfig {
    pub fn is_synthetic(&self) -> bool {
        matches!(self.dataset, DatasetSource::Synth(_))
    }

    pub fn n_splits(&self) -> usize {
        self.n_splits.unwrap_or(if self.is_synthetic() {
            DEFAULT_SPLITS_SYNTHETIC
        } else {
            DEFAULT_SPLITS_REAL
        })
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            fit: FitOptions {
                c: self.c,
                tol: self.tol,
                max_iter: self.max_iter,
            },
            threshold: self.threshold,
            k_samples: self.k_samples,
            min_occurrences: self.min_occurrences,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.n_splits() < 2 {
            return bad("n_splits must be at least 2".into());
        }
        if self.k_samples == 0 {
            return bad("k_samples must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad(format!("C must be positive, got {}", self.c));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) || self.max_iter == 0 {
            return bad("tol must be positive and max_iter at least 1".into());
        }
        if self.reliability_bins < 2 || self.kde_grid_points < 2 {
            return bad("reliability_bins and kde_grid_points must be at least 2".into());
        }
        if let Some(models) = &self.models {
            if models.is_empty() {
                return bad("models must not be empty".into());
            }
            for (i, m) in models.iter().enumerate() {
                if models[..i].iter().any(|o| o.name == m.name) {
                    return bad(format!("model {} is listed twice", m.name));
                }
            }
        }
        if let DatasetSource::Synth(synth) = &self.dataset {
            synth.validate()?;
        }
        Ok(())
    }

    /// Seed of the synthetic cohort, when there is one.
    pub fn synth_seed(&self) -> u64 {
        seed::derive_seed(self.seed, stream::SYNTH_FEATURE, 0)
    }

    pub fn load_cohort(&self) -> Result<Cohort> {
        match &self.dataset {
            DatasetSource::Path(path) => tabular::load_cohort(
                path,
                &ColumnSchema {
                    covariates: self.covariate_columns.clone(),
                },
            ),
            DatasetSource::Synth(synth) => synthgen::generate(&SynthConfig {
                seed: self.synth_seed(),
                ..synth.clone()
            }),
        }
    }

    fn default_imbalance(&self, target: Target) -> ImbalanceKind {
        match (self.is_synthetic(), target) {
            (true, _) | (false, Target::FirstFollowUp) => ImbalanceKind::InverseFrequency,
            (false, Target::SecondFollowUp) => ImbalanceKind::Smote,
        }
    }

    /// Model list with every default filled in.
    pub fn resolved_models(&self, cohort: &Cohort) -> Vec<ModelSpec> {
        let requests: Vec<ModelRequest> = match &self.models {
            Some(m) => m.clone(),
            None => ModelName::ALL
                .into_iter()
                .filter(|n| !n.requires_fu1() || (!self.is_synthetic() && cohort.has_fu1()))
                .map(|name| ModelRequest {
                    name,
                    imbalance: None,
                    include_covariates: false,
                })
                .collect(),
        };
        requests
            .into_iter()
            .map(|r| ModelSpec {
                imbalance: r
                    .imbalance
                    .unwrap_or_else(|| ImbalanceStrategy::with_kind(self.default_imbalance(r.name.target()))),
                name: r.name,
                include_covariates: r.include_covariates,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: ModelName,
    pub target: Target,
    pub imbalance: ImbalanceKind,
    pub include_covariates: bool,
    pub status: ModelStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<ScoreSummary>,
    /// Splits whose fit fell back to an intercept-only model.
    pub degenerate_splits: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub delta_fallbacks: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSplit {
    pub raw_brier: f64,
    pub isotonic_brier: f64,
    pub raw_log_loss: f64,
    pub isotonic_log_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = if n > 1.0 {
            values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, sd: var.sqrt() }
    }
}

/// Step-1 probabilities before and after isotonic calibration, per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub raw_brier: MeanSd,
    pub isotonic_brier: MeanSd,
    pub raw_log_loss: MeanSd,
    pub isotonic_log_loss: MeanSd,
    pub per_split: Vec<CalibrationSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDensity {
    pub patient_id: String,
    pub y1: u8,
    /// `(split, probability)` pairs recorded in Step 1.
    pub probas: Vec<(usize, f64)>,
    pub bandwidth: f64,
    /// `(x, density)` on a uniform grid over `[0, 1]`.
    pub grid: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPlot {
    pub patient_ids: Vec<String>,
    pub y1: Vec<u8>,
    pub y2: Vec<u8>,
    pub scores: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
}

/// Data behind the figures; written as CSVs rather than into the JSON report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub reliability: Vec<(String, ReliabilityCurve)>,
    pub patient_densities: Vec<PatientDensity>,
    pub pca: Option<PcaPlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub version: String,
    pub ci_method: String,
    pub calibration_note: String,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            ci_method: "mean +/- 1.96 * sd / sqrt(m) over the m splits where the metric is defined (sd with m - 1)"
                .to_string(),
            calibration_note: "isotonic maps are fitted and scored on the same test set, so calibrated scores are optimistic and only diagnostic"
                .to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n_patients: usize,
    /// Sizes of the `(y1, y2)` strata in the order 00, 01, 10, 11.
    pub stratum_sizes: [usize; 4],
    /// `[y1][y2]` patient counts.
    pub transition_matrix: [[usize; 2]; 2],
    pub n_splits: usize,
    pub split_plan_attempt: usize,
    pub seeds: BTreeMap<String, u64>,
    pub models: Vec<ModelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationReport>,
    /// Problems that did not abort the run.
    pub warnings: Vec<String>,
    pub metadata: ReportMetadata,
    #[serde(skip)]
    pub plots: PlotData,
}

impl ExperimentReport {
    pub fn model(&self, name: ModelName) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn summary(&self, name: ModelName) -> Option<&ScoreSummary> {
        self.model(name).and_then(|m| m.summary.as_ref())
    }

    pub fn all_failed(&self) -> bool {
        self.models.iter().all(|m| m.status == ModelStatus::Failed)
    }
}

fn calibration_report(step1: &Step1Output) -> Result<CalibrationReport> {
    let per_split = step1
        .predictions
        .iter()
        .map(|s| {
            let map = calib::fit_isotonic(&s.proba, &s.y_true)?;
            let iso = map.apply(&s.proba);
            Ok(CalibrationSplit {
                raw_brier: calib::brier_score(&s.proba, &s.y_true)?,
                isotonic_brier: calib::brier_score(&iso, &s.y_true)?,
                raw_log_loss: calib::log_loss(&s.proba, &s.y_true, LOG_LOSS_EPS)?,
                isotonic_log_loss: calib::log_loss(&iso, &s.y_true, LOG_LOSS_EPS)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let it = per_split.iter();
    Ok(CalibrationReport {
        raw_brier: MeanSd::of(it.clone().map(|s| s.raw_brier)),
        isotonic_brier: MeanSd::of(it.clone().map(|s| s.isotonic_brier)),
        raw_log_loss: MeanSd::of(it.clone().map(|s| s.raw_log_loss)),
        isotonic_log_loss: MeanSd::of(it.map(|s| s.isotonic_log_loss)),
        per_split,
    })
}

fn isotonic_pooled(step1: &Step1Output) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut p = Vec::new();
    let mut y = Vec::new();
    for s in &step1.predictions {
        p.extend(calib::fit_isotonic(&s.proba, &s.y_true)?.apply(&s.proba));
        y.extend_from_slice(&s.y_true);
    }
    Ok((p, y))
}

fn density_plots(step1: &Step1Output, densities: &[GaussianKde], cohort: &Cohort, points: usize) -> Vec<PatientDensity> {
    let grid_x: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    cohort
        .patients()
        .iter()
        .zip(densities)
        .enumerate()
        .map(|(j, (patient, kde))| PatientDensity {
            patient_id: patient.patient_id.clone(),
            y1: patient.y1,
            probas: step1.proba_table.entries[j].clone(),
            bandwidth: kde.bandwidth(),
            grid: grid_x.iter().map(|&x| (x, kde.pdf(x))).collect(),
        })
        .collect()
}

fn pca_plot(cohort: &Cohort) -> Result<PcaPlot> {
    let pca = metrics::pca_project(cohort.baseline_matrix().view())?;
    Ok(PcaPlot {
        patient_ids: cohort.patients().iter().map(|p| p.patient_id.clone()).collect(),
        y1: cohort.y1(),
        y2: cohort.y2(),
        scores: pca.projection.rows().into_iter().map(|r| [r[0], r[1]]).collect(),
        explained_variance: pca.explained_variance,
        total_variance: pca.total_variance,
    })
}

/// Runs every requested model on one shared split plan. Individual model
/// failures are recorded in the report; only problems that prevent any
/// model from running (config, split plan) are returned as errors.
pub fn run_experiment(config: &ExperimentConfig, cohort: &Cohort) -> Result<ExperimentReport> {
    config.validate()?;
    let settings = config.settings();
    let specs = config.resolved_models(cohort);
    let split_seed = seed::derive_seed(config.seed, stream::SPLIT_PLAN, 0);
    let plan = tabular::make_splits(
        cohort,
        &SplitConfig {
            n_splits: config.n_splits(),
            test_fraction: config.test_fraction,
            seed: split_seed,
            min_occurrences: config.min_occurrences,
            max_retries: config.max_retries,
        },
    )?;

    let mut seeds = BTreeMap::new();
    seeds.insert("master".to_string(), config.seed);
    seeds.insert("split_plan".to_string(), split_seed);
    if config.is_synthetic() {
        seeds.insert("synth_cohort".to_string(), config.synth_seed());
    }
    for spec in &specs {
        seeds.insert(format!("model.{}", spec.name), super::split_seed(&settings, spec.name, 0));
    }

    let mut warnings = Vec::new();
    let mut plots = PlotData::default();

    let step1_spec = specs
        .iter()
        .find(|s| s.name == ModelName::BaselineFu1)
        .cloned()
        .unwrap_or_else(|| ModelSpec {
            name: ModelName::BaselineFu1,
            imbalance: ImbalanceStrategy::with_kind(config.default_imbalance(Target::FirstFollowUp)),
            include_covariates: specs.iter().any(|s| s.name.needs_step1() && s.include_covariates),
        });
    let step1: Option<std::result::Result<Step1Output, String>> = specs
        .iter()
        .any(|s| s.name.needs_step1())
        .then(|| run_step1(cohort, &plan, &step1_spec, &settings).map_err(|e| format!("step 1: {e}")));

    let mut calibration = None;
    let mut sampled = None;
    if let Some(Ok(step1)) = &step1 {
        match calibration_report(step1) {
            Ok(c) => calibration = Some(c),
            Err(e) => warnings.push(format!("calibration: {e}")),
        }
        if specs.iter().any(|s| s.name == ModelName::LongitGkde) {
            let labels_seed = seed::derive_seed(config.seed, stream::SAMPLED_LABELS, 0);
            seeds.insert("sampled_labels".to_string(), labels_seed);
            sampled = Some(
                build_patient_densities(&step1.proba_table, config.min_occurrences)
                    .and_then(|densities| {
                        plots.patient_densities = density_plots(step1, &densities, cohort, config.kde_grid_points);
                        sample_intermediate_labels(&densities, config.k_samples, config.threshold, labels_seed)
                    })
                    .map_err(|e| format!("patient densities: {e}")),
            );
        }
    }

    let mut models = Vec::with_capacity(specs.len());
    for spec in &specs {
        let outcome: std::result::Result<ModelOutcome, String> = (|| {
            if spec.name.requires_fu1() && !cohort.has_fu1() {
                return Err(format!("{} needs follow-up-1 features, the cohort has none", spec.name));
            }
            let step1 = || step1.clone().expect("step 1 runs when a model needs it");
            let e = |e: Error| e.to_string();
            match spec.name {
                ModelName::BaselineFu1 => step1_outcome(&step1()?).map_err(e),
                ModelName::LongitTrue => {
                    run_longitudinal(cohort, &plan, spec, &settings, IntermediateLabels::True).map_err(e)
                }
                ModelName::LongitPredicted => {
                    let s = step1()?;
                    run_longitudinal(cohort, &plan, spec, &settings, IntermediateLabels::Predicted(&s.proba_table))
                        .map_err(e)
                }
                ModelName::LongitGkde => {
                    step1()?;
                    let matrix = sampled.clone().expect("sampled when gkde is requested")?;
                    run_longitudinal(cohort, &plan, spec, &settings, IntermediateLabels::Sampled(&matrix)).map_err(e)
                }
                _ => run_benchmark(cohort, &plan, spec, &settings).map_err(e),
            }
        })();

        let mut report = ModelReport {
            name: spec.name,
            target: spec.name.target(),
            imbalance: spec.imbalance.kind,
            include_covariates: spec.include_covariates,
            status: ModelStatus::Failed,
            error: None,
            summary: None,
            degenerate_splits: 0,
            delta_fallbacks: Vec::new(),
        };
        match outcome {
            Ok(out) => {
                match calib::reliability_curve(&out.pooled_proba, &out.pooled_y, config.reliability_bins) {
                    Ok(curve) => plots.reliability.push((spec.name.to_string(), curve)),
                    Err(e) => warnings.push(format!("reliability curve for {}: {e}", spec.name)),
                }
                if out.degenerate_splits > 0 {
                    warnings.push(format!(
                        "{}: {} of {} splits fitted an intercept-only model",
                        spec.name,
                        out.degenerate_splits,
                        plan.len()
                    ));
                }
                for (feature, count) in out.delta_fallbacks.iter().filter(|(_, c)| *c > 0) {
                    warnings.push(format!(
                        "delta: {count} patients have a zero baseline for {feature}; used the absolute change"
                    ));
                }
                report.status = ModelStatus::Ok;
                report.summary = Some(out.summary);
                report.degenerate_splits = out.degenerate_splits;
                report.delta_fallbacks = out.delta_fallbacks;
            }
            Err(msg) => report.error = Some(msg),
        }
        models.push(report);
    }

    if let Some(Ok(step1)) = &step1 {
        match isotonic_pooled(step1).and_then(|(p, y)| calib::reliability_curve(&p, &y, config.reliability_bins)) {
            Ok(curve) => plots.reliability.push(("baseline_fu1_isotonic".to_string(), curve)),
            Err(e) => warnings.push(format!("isotonic reliability curve: {e}")),
        }
    }
    match pca_plot(cohort) {
        Ok(p) => plots.pca = Some(p),
        Err(e) => warnings.push(format!("pca: {e}")),
    }

    Ok(ExperimentReport {
        config: config.clone(),
        n_patients: cohort.len(),
        stratum_sizes: cohort.stratum_sizes(),
        transition_matrix: synthgen::transition_matrix(cohort),
        n_splits: plan.len(),
        split_plan_attempt: plan.attempt,
        seeds,
        models,
        calibration,
        warnings,
        metadata: ReportMetadata::default(),
        plots,
    })
}
