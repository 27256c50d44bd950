//! The longitudinal prediction procedure and its benchmark models.
//!
//! 1. [`run_step1`]: per split, fit the first-follow-up classifier on baseline
//!    features and record each test patient's predicted probability in a
//!    [`ProbaTable`].
//! 2. [`build_patient_densities`] + [`sample_intermediate_labels`]: fit a KDE
//!    per patient over those probabilities, draw `k` samples and threshold
//!    them into intermediate labels.
//! 3. [`run_longitudinal`]: per split, fit the second-follow-up classifier on
//!    baseline features plus the *true* first-follow-up label, then test it
//!    with the true, predicted or sampled label in that slot.
//!
//! [`run_benchmark`] covers the single-timepoint reference models and
//! [`experiment::run_experiment`] ties everything together on one shared
//! split plan.

pub mod experiment;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::GaussianKde;
use crate::glm::{self, FitOptions, LogisticModel, SampleWeights};
use crate::metrics::{self, ScoreSummary, SkillScores};
use crate::resample::{self, ImbalanceKind, ImbalanceStrategy};
use crate::seed::{self, stream};
use crate::tabular::{Cohort, Normalizer, SplitPlan, MONTHS_FU2};
use crate::{Error, Result};

pub use experiment::{run_experiment, DatasetSource, ExperimentConfig, ExperimentReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    BaselineFu1,
    BaselineFu2,
    LabelsOnly,
    RadiomicsFu1,
    Delta,
    LongitTrue,
    LongitPredicted,
    LongitGkde,
}

impl ModelName {
    pub const ALL: [ModelName; 8] = [
        ModelName::BaselineFu1,
        ModelName::BaselineFu2,
        ModelName::LabelsOnly,
        ModelName::RadiomicsFu1,
        ModelName::Delta,
        ModelName::LongitTrue,
        ModelName::LongitPredicted,
        ModelName::LongitGkde,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::BaselineFu1 => "baseline_fu1",
            ModelName::BaselineFu2 => "baseline_fu2",
            ModelName::LabelsOnly => "labels_only",
            ModelName::RadiomicsFu1 => "radiomics_fu1",
            ModelName::Delta => "delta",
            ModelName::LongitTrue => "longit_true",
            ModelName::LongitPredicted => "longit_predicted",
            ModelName::LongitGkde => "longit_gkde",
        }
    }

    pub fn target(self) -> Target {
        match self {
            ModelName::BaselineFu1 => Target::FirstFollowUp,
            _ => Target::SecondFollowUp,
        }
    }

    pub fn requires_fu1(self) -> bool {
        matches!(self, ModelName::RadiomicsFu1 | ModelName::Delta)
    }

    pub fn needs_step1(self) -> bool {
        matches!(
            self,
            ModelName::BaselineFu1 | ModelName::LongitPredicted | ModelName::LongitGkde
        )
    }

    fn stream_index(self) -> u64 {
        self as u64
    }
}

impl std::fmt::Display for ModelName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    FirstFollowUp,
    SecondFollowUp,
}

impl Target {
    pub fn labels(self, cohort: &Cohort) -> Vec<u8> {
        match self {
            Target::FirstFollowUp => cohort.y1(),
            Target::SecondFollowUp => cohort.y2(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    pub imbalance: ImbalanceStrategy,
    pub include_covariates: bool,
}

impl ModelSpec {
    pub fn new(name: ModelName, kind: ImbalanceKind) -> Self {
        Self {
            name,
            imbalance: ImbalanceStrategy::with_kind(kind),
            include_covariates: false,
        }
    }
}

/// Knobs shared by every model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub fit: FitOptions,
    pub threshold: f64,
    pub k_samples: usize,
    pub min_occurrences: usize,
    pub seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            threshold: 0.5,
            k_samples: 100,
            min_occurrences: 5,
            seed: 0,
        }
    }
}

/// Which columns feed a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    Baseline,
    /// The true first-follow-up label as the only feature.
    LabelsOnly,
    Fu1,
    /// `(fu1 - base) / base`, falling back to `fu1 - base` when `|base| < 1e-12`.
    Delta,
}

pub const DELTA_ZERO: f64 = 1e-12;

/// Feature matrix for the patients a model can use.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: Array2<f64>,
    /// Cohort index of each design row.
    pub patients: Vec<usize>,
    /// Leading columns that go through min-max scaling; the rest are already
    /// in `{0, 1}` and pass through.
    pub n_scaled: usize,
    pub column_names: Vec<String>,
    /// Per delta feature, how many cells used the absolute-change fallback.
    pub delta_fallbacks: Vec<(String, usize)>,
}

impl Design {
    /// Maps cohort indices to design rows, dropping patients not in the design.
    pub fn rows_for(&self, patients: &[usize], lookup: &[Option<usize>]) -> Vec<usize> {
        patients.iter().filter_map(|&p| lookup[p]).collect()
    }

    pub fn row_lookup(&self, n_patients: usize) -> Vec<Option<usize>> {
        let mut lookup = vec![None; n_patients];
        for (row, &p) in self.patients.iter().enumerate() {
            lookup[p] = Some(row);
        }
        lookup
    }

    /// Appends one pass-through column.
    pub fn with_extra_column(&self, name: &str, values: &[f64]) -> Design {
        let mut x = Array2::zeros((self.x.nrows(), self.x.ncols() + 1));
        x.slice_mut(ndarray::s![.., ..self.x.ncols()]).assign(&self.x);
        for (r, &v) in values.iter().enumerate() {
            x[[r, self.x.ncols()]] = v;
        }
        let mut column_names = self.column_names.clone();
        column_names.push(name.to_string());
        Design {
            x,
            patients: self.patients.clone(),
            n_scaled: self.n_scaled,
            column_names,
            delta_fallbacks: self.delta_fallbacks.clone(),
        }
    }
}

/// Covariates a model for `target` may see: all of them for the second
/// follow-up, all but `months_fu2` for the first.
fn covariate_columns(cohort: &Cohort, target: Target) -> Vec<usize> {
    cohort
        .covariate_names()
        .iter()
        .enumerate()
        .filter(|(_, n)| !(target == Target::FirstFollowUp && n.as_str() == MONTHS_FU2))
        .map(|(i, _)| i)
        .collect()
}

pub fn build_design(
    cohort: &Cohort,
    features: FeatureSet,
    target: Target,
    include_covariates: bool,
) -> Result<Design> {
    let patients: Vec<usize> = match features {
        FeatureSet::Fu1 | FeatureSet::Delta => (0..cohort.len())
            .filter(|&i| cohort.patients()[i].fu1.is_some())
            .collect(),
        _ => (0..cohort.len()).collect(),
    };
    if patients.is_empty() {
        return Err(Error::Pipeline(
            "no patient has follow-up-1 features".into(),
        ));
    }

    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut delta_fallbacks = Vec::new();
    let mut passthrough: Vec<(String, Vec<f64>)> = Vec::new();
    let records = cohort.patients();

    match features {
        FeatureSet::Baseline => {
            for (j, name) in cohort.feature_names_baseline().iter().enumerate() {
                names.push(format!("base_{name}"));
                columns.push(patients.iter().map(|&p| records[p].baseline[j]).collect());
            }
        }
        FeatureSet::LabelsOnly => {
            passthrough.push((
                "y1_true".into(),
                patients.iter().map(|&p| f64::from(records[p].y1)).collect(),
            ));
        }
        FeatureSet::Fu1 => {
            for (j, name) in cohort.feature_names_fu1().iter().enumerate() {
                names.push(format!("fu1_{name}"));
                columns.push(
                    patients
                        .iter()
                        .map(|&p| records[p].fu1.as_ref().expect("filtered")[j])
                        .collect(),
                );
            }
        }
        FeatureSet::Delta => {
            let pairs: Vec<(usize, usize, &String)> = cohort
                .feature_names_baseline()
                .iter()
                .enumerate()
                .filter_map(|(b, name)| {
                    cohort
                        .feature_names_fu1()
                        .iter()
                        .position(|f| f == name)
                        .map(|f| (b, f, name))
                })
                .collect();
            if pairs.is_empty() {
                return Err(Error::Pipeline(
                    "delta model needs fu1 features named like the baseline features".into(),
                ));
            }
            for (b, f, name) in pairs {
                let mut fallbacks = 0;
                let col = patients
                    .iter()
                    .map(|&p| {
                        let base = records[p].baseline[b];
                        let fu1 = records[p].fu1.as_ref().expect("filtered")[f];
                        if base.abs() < DELTA_ZERO {
                            fallbacks += 1;
                            fu1 - base
                        } else {
                            (fu1 - base) / base
                        }
                    })
                    .collect();
                names.push(format!("delta_{name}"));
                columns.push(col);
                delta_fallbacks.push((name.clone(), fallbacks));
            }
        }
    }
    if include_covariates {
        for c in covariate_columns(cohort, target) {
            names.push(cohort.covariate_names()[c].clone());
            columns.push(patients.iter().map(|&p| records[p].covariates[c]).collect());
        }
    }
    let n_scaled = columns.len();
    for (name, col) in passthrough {
        names.push(name);
        columns.push(col);
    }

    let x = Array2::from_shape_fn((patients.len(), columns.len()), |(i, j)| columns[j][i]);
    Ok(Design {
        x,
        patients,
        n_scaled,
        column_names: names,
        delta_fallbacks,
    })
}

/// Min-max scaling of the leading `n_scaled` columns; the rest pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub normalizer: Option<Normalizer>,
    pub n_scaled: usize,
}

impl FeatureScaler {
    pub fn fit(x: ArrayView2<'_, f64>, n_scaled: usize, train: &[usize]) -> Result<Self> {
        let normalizer = if n_scaled > 0 {
            Some(Normalizer::fit(x.slice(ndarray::s![.., ..n_scaled]), train)?)
        } else {
            None
        };
        Ok(Self {
            normalizer,
            n_scaled,
        })
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = x.to_owned();
        if let Some(norm) = &self.normalizer {
            let scaled = norm.apply(x.slice(ndarray::s![.., ..self.n_scaled]))?;
            out.slice_mut(ndarray::s![.., ..self.n_scaled]).assign(&scaled);
        }
        Ok(out)
    }
}

/// Model fitted on one split's training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub scaler: FeatureScaler,
    pub model: LogisticModel,
}

impl SplitModel {
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.model.predict_proba(self.scaler.apply(x)?.view())
    }
}

/// Normalize on train rows, handle class imbalance, fit. Only `train` rows of
/// `x` and `y` are read.
pub fn fit_split_model(
    x: ArrayView2<'_, f64>,
    n_scaled: usize,
    y: &[u8],
    train: &[usize],
    imbalance: &ImbalanceStrategy,
    smote_seed: u64,
    fit: &FitOptions,
) -> Result<SplitModel> {
    let scaler = FeatureScaler::fit(x, n_scaled, train)?;
    let x_train = scaler.apply(x.select(Axis(0), train).view())?;
    let y_train: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let ones = y_train.iter().filter(|&&v| v == 1).count();
    let both_classes = ones > 0 && ones < y_train.len();

    let model = match imbalance.kind {
        ImbalanceKind::InverseFrequency if both_classes => {
            let w = resample::inverse_frequency_weights(&y_train)?;
            glm::fit_l1_logistic(x_train.view(), &y_train, &w, fit)?
        }
        ImbalanceKind::Smote if both_classes => {
            let strategy = ImbalanceStrategy {
                seed: smote_seed,
                ..imbalance.clone()
            };
            let (xs, ys) = resample::smote_oversample(x_train.view(), &y_train, &strategy)?;
            glm::fit_l1_logistic(xs.view(), &ys, &SampleWeights::unit(ys.len()), fit)?
        }
        _ => glm::fit_l1_logistic(
            x_train.view(),
            &y_train,
            &SampleWeights::unit(y_train.len()),
            fit,
        )?,
    };
    Ok(SplitModel { scaler, model })
}

/// Test-set predictions of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPredictions {
    /// Cohort indices of the test patients.
    pub patients: Vec<usize>,
    pub proba: Vec<f64>,
    pub y_true: Vec<u8>,
}

/// Per-patient `(split_index, probability)` records from Step 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbaTable {
    pub patient_ids: Vec<String>,
    pub entries: Vec<Vec<(usize, f64)>>,
}

impl ProbaTable {
    pub fn new(patient_ids: Vec<String>) -> Self {
        let n = patient_ids.len();
        Self {
            patient_ids,
            entries: vec![Vec::new(); n],
        }
    }

    pub fn record(&mut self, patient: usize, split: usize, proba: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&proba) {
            return Err(Error::Pipeline(format!("probability {proba} outside [0, 1]")));
        }
        let list = &mut self.entries[patient];
        if list.iter().any(|&(s, _)| s == split) {
            return Err(Error::Pipeline(format!(
                "patient {} already has a probability for split {split}",
                self.patient_ids[patient]
            )));
        }
        list.push((split, proba));
        Ok(())
    }

    pub fn get(&self, patient: usize, split: usize) -> Option<f64> {
        self.entries[patient]
            .iter()
            .find(|&&(s, _)| s == split)
            .map(|&(_, p)| p)
    }

    pub fn probas(&self, patient: usize) -> Vec<f64> {
        self.entries[patient].iter().map(|&(_, p)| p).collect()
    }

    pub fn n_patients(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Output {
    pub split_scores: Vec<SkillScores>,
    pub predictions: Vec<SplitPredictions>,
    pub proba_table: ProbaTable,
    pub degenerate_splits: usize,
}

/// Per-split outcome of any second-follow-up (or Step-1) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcome {
    pub name: ModelName,
    pub split_scores: Vec<SkillScores>,
    pub summary: ScoreSummary,
    /// Test predictions pooled over splits (and over samples in sampled mode).
    pub pooled_proba: Vec<f64>,
    pub pooled_y: Vec<u8>,
    pub degenerate_splits: usize,
    pub delta_fallbacks: Vec<(String, usize)>,
}

fn model_seed(settings: &PipelineSettings, name: ModelName) -> u64 {
    seed::derive_seed(settings.seed, stream::MODEL, name.stream_index())
}

/// Seed for the per-split SMOTE draws of `name`.
pub fn split_seed(settings: &PipelineSettings, name: ModelName, split: usize) -> u64 {
    seed::derive_seed(model_seed(settings, name), stream::MODEL, split as u64)
}

pub fn run_step1(
    cohort: &Cohort,
    plan: &SplitPlan,
    spec: &ModelSpec,
    settings: &PipelineSettings,
) -> Result<Step1Output> {
    let design = build_design(cohort, FeatureSet::Baseline, Target::FirstFollowUp, spec.include_covariates)?;
    let y = cohort.y1();
    let per_split: Vec<(SplitPredictions, SkillScores, bool)> = plan
        .splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let fitted = fit_split_model(
                design.x.view(),
                design.n_scaled,
                &y,
                &split.train,
                &spec.imbalance,
                split_seed(settings, ModelName::BaselineFu1, i),
                &settings.fit,
            )?;
            let proba = fitted.predict_proba(design.x.select(Axis(0), &split.test).view())?;
            let y_true: Vec<u8> = split.test.iter().map(|&j| y[j]).collect();
            let labels: Vec<u8> = proba.iter().map(|&p| glm::threshold_label(p, settings.threshold)).collect();
            let scores = metrics::skill_scores(&y_true, &labels, &proba)?;
            Ok((
                SplitPredictions {
                    patients: split.test.clone(),
                    proba,
                    y_true,
                },
                scores,
                fitted.model.degenerate,
            ))
        })
        .collect::<Result<_>>()?;

    let mut table = ProbaTable::new(cohort.patients().iter().map(|p| p.patient_id.clone()).collect());
    let mut split_scores = Vec::with_capacity(per_split.len());
    let mut predictions = Vec::with_capacity(per_split.len());
    let mut degenerate_splits = 0;
    for (i, (preds, scores, degenerate)) in per_split.into_iter().enumerate() {
        for (&p, &proba) in preds.patients.iter().zip(&preds.proba) {
            table.record(p, i, proba)?;
        }
        split_scores.push(scores);
        predictions.push(preds);
        degenerate_splits += usize::from(degenerate);
    }
    Ok(Step1Output {
        split_scores,
        predictions,
        proba_table: table,
        degenerate_splits,
    })
}

/// One KDE per patient over the probabilities recorded in Step 1.
pub fn build_patient_densities(table: &ProbaTable, min_occurrences: usize) -> Result<Vec<GaussianKde>> {
    if table.n_patients() == 0 {
        return Err(Error::Pipeline("probability table is empty".into()));
    }
    (0..table.n_patients())
        .map(|j| {
            let probas = table.probas(j);
            if probas.len() < min_occurrences.max(1) {
                return Err(Error::Pipeline(format!(
                    "patient {} has {} recorded probabilities, at least {} are required",
                    table.patient_ids[j],
                    probas.len(),
                    min_occurrences.max(1)
                )));
            }
            GaussianKde::fit(&probas)
        })
        .collect()
}

/// `n_patients × k` thresholded draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledLabelMatrix {
    pub labels: Array2<u8>,
    pub source_seed: u64,
}

impl SampledLabelMatrix {
    pub fn k(&self) -> usize {
        self.labels.ncols()
    }
}

/// Draws `k` probabilities per patient, clips them to `[0, 1]` and labels
/// each `1` when it is `>= threshold`.
pub fn sample_intermediate_labels(
    densities: &[GaussianKde],
    k: usize,
    threshold: f64,
    seed_value: u64,
) -> Result<SampledLabelMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut labels = Array2::zeros((densities.len(), k));
    for (j, kde) in densities.iter().enumerate() {
        let mut rng = seed::derived_rng(seed_value, stream::SAMPLED_LABELS, j as u64);
        for (slot, draw) in labels.row_mut(j).iter_mut().zip(kde.sample_with(k, &mut rng)) {
            *slot = glm::threshold_label(draw.clamp(0.0, 1.0), threshold);
        }
    }
    Ok(SampledLabelMatrix {
        labels,
        source_seed: seed_value,
    })
}

/// Test-time value of the intermediate-response feature.
#[derive(Debug, Clone, Copy)]
pub enum IntermediateLabels<'a> {
    True,
    /// Thresholded Step-1 probability of the same split.
    Predicted(&'a ProbaTable),
    Sampled(&'a SampledLabelMatrix),
}

impl IntermediateLabels<'_> {
    fn model_name(&self) -> ModelName {
        match self {
            IntermediateLabels::True => ModelName::LongitTrue,
            IntermediateLabels::Predicted(_) => ModelName::LongitPredicted,
            IntermediateLabels::Sampled(_) => ModelName::LongitGkde,
        }
    }
}

struct SplitResult {
    scores: SkillScores,
    proba: Vec<f64>,
    y: Vec<u8>,
    degenerate: bool,
}

fn finish(
    name: ModelName,
    results: Vec<SplitResult>,
    delta_fallbacks: Vec<(String, usize)>,
) -> Result<ModelOutcome> {
    let split_scores: Vec<SkillScores> = results.iter().map(|r| r.scores).collect();
    let summary = metrics::summarize_across_splits(&split_scores)?;
    let degenerate_splits = results.iter().filter(|r| r.degenerate).count();
    let mut pooled_proba = Vec::new();
    let mut pooled_y = Vec::new();
    for r in results {
        pooled_proba.extend(r.proba);
        pooled_y.extend(r.y);
    }
    Ok(ModelOutcome {
        name,
        split_scores,
        summary,
        pooled_proba,
        pooled_y,
        degenerate_splits,
        delta_fallbacks,
    })
}

/// Step 3. Training always appends the true first-follow-up label after the
/// baseline features; `labels` picks what goes in that column at test time.
pub fn run_longitudinal(
    cohort: &Cohort,
    plan: &SplitPlan,
    spec: &ModelSpec,
    settings: &PipelineSettings,
    labels: IntermediateLabels<'_>,
) -> Result<ModelOutcome> {
    let base = build_design(cohort, FeatureSet::Baseline, Target::SecondFollowUp, spec.include_covariates)?;
    let y1_true: Vec<f64> = cohort.y1().into_iter().map(f64::from).collect();
    let design = base.with_extra_column("y1", &y1_true);
    let y2 = cohort.y2();
    let label_col = design.x.ncols() - 1;
    let name = labels.model_name();

    if let IntermediateLabels::Sampled(matrix) = labels {
        if matrix.labels.nrows() != cohort.len() {
            return Err(Error::DimensionMismatch {
                expected: cohort.len(),
                found: matrix.labels.nrows(),
            });
        }
    }

    let results: Vec<SplitResult> = plan
        .splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let fitted = fit_split_model(
                design.x.view(),
                design.n_scaled,
                &y2,
                &split.train,
                &spec.imbalance,
                split_seed(settings, name, i),
                &settings.fit,
            )?;
            let y_true: Vec<u8> = split.test.iter().map(|&j| y2[j]).collect();
            let mut x_test = design.x.select(Axis(0), &split.test);

            let evaluate = |x_test: &Array2<f64>| -> Result<(SkillScores, Vec<f64>)> {
                let proba = fitted.predict_proba(x_test.view())?;
                let pred: Vec<u8> = proba.iter().map(|&p| glm::threshold_label(p, settings.threshold)).collect();
                Ok((metrics::skill_scores(&y_true, &pred, &proba)?, proba))
            };

            let (scores, proba, y) = match labels {
                IntermediateLabels::True => {
                    let (s, p) = evaluate(&x_test)?;
                    (s, p, y_true.clone())
                }
                IntermediateLabels::Predicted(table) => {
                    for (r, &j) in split.test.iter().enumerate() {
                        let p = table.get(j, i).ok_or_else(|| {
                            Error::Pipeline(format!(
                                "no Step-1 probability for patient {} in split {i}",
                                table.patient_ids[j]
                            ))
                        })?;
                        x_test[[r, label_col]] = f64::from(glm::threshold_label(p, settings.threshold));
                    }
                    let (s, p) = evaluate(&x_test)?;
                    (s, p, y_true.clone())
                }
                IntermediateLabels::Sampled(matrix) => {
                    let mut per_sample = Vec::with_capacity(matrix.k());
                    let mut pooled = Vec::with_capacity(matrix.k() * split.test.len());
                    for k in 0..matrix.k() {
                        for (r, &j) in split.test.iter().enumerate() {
                            x_test[[r, label_col]] = f64::from(matrix.labels[[j, k]]);
                        }
                        let (s, p) = evaluate(&x_test)?;
                        per_sample.push(s);
                        pooled.extend(p);
                    }
                    let y = y_true.iter().copied().cycle().take(pooled.len()).collect();
                    (SkillScores::mean_of(&per_sample)?, pooled, y)
                }
            };
            Ok(SplitResult {
                scores,
                proba,
                y,
                degenerate: fitted.model.degenerate,
            })
        })
        .collect::<Result<_>>()?;
    finish(name, results, Vec::new())
}

/// Single-timepoint reference models for the second follow-up.
pub fn run_benchmark(
    cohort: &Cohort,
    plan: &SplitPlan,
    spec: &ModelSpec,
    settings: &PipelineSettings,
) -> Result<ModelOutcome> {
    let features = match spec.name {
        ModelName::BaselineFu2 => FeatureSet::Baseline,
        ModelName::LabelsOnly => FeatureSet::LabelsOnly,
        ModelName::RadiomicsFu1 => FeatureSet::Fu1,
        ModelName::Delta => FeatureSet::Delta,
        other => {
            return Err(Error::InvalidArgument(format!("{other} is not a benchmark model")));
        }
    };
    let design = build_design(cohort, features, Target::SecondFollowUp, spec.include_covariates)?;
    let lookup = design.row_lookup(cohort.len());
    let y2_all = cohort.y2();
    let y: Vec<u8> = design.patients.iter().map(|&p| y2_all[p]).collect();

    let results: Vec<SplitResult> = plan
        .splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| {
            let train = design.rows_for(&split.train, &lookup);
            let test = design.rows_for(&split.test, &lookup);
            if train.len() < 2 || test.is_empty() {
                return Err(Error::Pipeline(format!(
                    "split {i} has too few patients with the required features"
                )));
            }
            let fitted = fit_split_model(
                design.x.view(),
                design.n_scaled,
                &y,
                &train,
                &spec.imbalance,
                split_seed(settings, spec.name, i),
                &settings.fit,
            )?;
            let proba = fitted.predict_proba(design.x.select(Axis(0), &test).view())?;
            let y_true: Vec<u8> = test.iter().map(|&r| y[r]).collect();
            let pred: Vec<u8> = proba.iter().map(|&p| glm::threshold_label(p, settings.threshold)).collect();
            Ok(SplitResult {
                scores: metrics::skill_scores(&y_true, &pred, &proba)?,
                proba,
                y: y_true,
                degenerate: fitted.model.degenerate,
            })
        })
        .collect::<Result<_>>()?;
    finish(spec.name, results, design.delta_fallbacks)
}

/// Step 1 viewed as a model outcome (target `y1`).
pub fn step1_outcome(step1: &Step1Output) -> Result<ModelOutcome> {
    let summary = metrics::summarize_across_splits(&step1.split_scores)?;
    Ok(ModelOutcome {
        name: ModelName::BaselineFu1,
        split_scores: step1.split_scores.clone(),
        summary,
        pooled_proba: step1.predictions.iter().flat_map(|p| p.proba.iter().copied()).collect(),
        pooled_y: step1.predictions.iter().flat_map(|p| p.y_true.iter().copied()).collect(),
        degenerate_splits: step1.degenerate_splits,
        delta_fallbacks: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{self, PatientRecord, SplitConfig};

    fn toy_cohort(with_fu1: bool) -> Cohort {
        let patients = (0..40)
            .map(|i| {
                let a = (i * 37 % 40) as f64 / 40.0;
                let b = (i * 11 % 40) as f64 / 40.0;
                let y1 = u8::from(a + 0.3 * b > 0.6);
                let y2 = u8::from(i % 3 != 0) ^ (y1 & u8::from(i % 5 == 0));
                PatientRecord {
                    patient_id: format!("p{i}"),
                    baseline: vec![a, if i % 4 == 0 { 0.0 } else { b }],
                    fu1: with_fu1.then(|| vec![a * 1.1, b]),
                    covariates: vec![3.0 + (i % 4) as f64, 6.0 + (i % 3) as f64],
                    y1,
                    y2,
                }
            })
            .collect();
        Cohort::new(
            patients,
            vec!["a".into(), "b".into()],
            if with_fu1 { vec!["a".into(), "b".into()] } else { vec![] },
            vec!["months_fu1".into(), "months_fu2".into()],
        )
        .unwrap()
    }

    #[test]
    fn covariates_follow_the_target() {
        let cohort = toy_cohort(false);
        let d1 = build_design(&cohort, FeatureSet::Baseline, Target::FirstFollowUp, true).unwrap();
        assert_eq!(d1.column_names, ["base_a", "base_b", "months_fu1"]);
        let d2 = build_design(&cohort, FeatureSet::Baseline, Target::SecondFollowUp, true).unwrap();
        assert_eq!(d2.column_names, ["base_a", "base_b", "months_fu1", "months_fu2"]);
        let labels = build_design(&cohort, FeatureSet::LabelsOnly, Target::SecondFollowUp, false).unwrap();
        assert_eq!(labels.n_scaled, 0);
    }

    #[test]
    fn delta_uses_absolute_change_for_zero_base() {
        let cohort = toy_cohort(true);
        let d = build_design(&cohort, FeatureSet::Delta, Target::SecondFollowUp, false).unwrap();
        assert_eq!(d.delta_fallbacks[1].1, 10);
        assert!(d.x.iter().all(|v| v.is_finite()));
        // a in row 1: (1.1a - a) / a = 0.1
        assert!((d.x[[1, 0]] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn fu1_models_need_fu1() {
        let cohort = toy_cohort(false);
        assert!(build_design(&cohort, FeatureSet::Fu1, Target::SecondFollowUp, false).is_err());
    }

    #[test]
    fn test_rows_do_not_leak_into_fits() {
        let cohort = toy_cohort(false);
        let plan = tabular::make_splits(&cohort, &SplitConfig { min_occurrences: 1, ..SplitConfig::new(6, 0.4, 3) }).unwrap();
        let design = build_design(&cohort, FeatureSet::Baseline, Target::FirstFollowUp, true).unwrap();
        let y = cohort.y1();
        for kind in [ImbalanceKind::InverseFrequency, ImbalanceKind::Smote] {
            let strategy = ImbalanceStrategy::with_kind(kind);
            for split in &plan.splits {
                let fit = |x: ArrayView2<'_, f64>, y: &[u8]| {
                    fit_split_model(x, design.n_scaled, y, &split.train, &strategy, 9, &FitOptions::default())
                        .unwrap()
                };
                let reference = fit(design.x.view(), &y);
                let mut x = design.x.clone();
                let mut y_perturbed = y.clone();
                for &t in &split.test {
                    x.row_mut(t).mapv_inplace(|v| v * 7.0 - 100.0);
                    y_perturbed[t] ^= 1;
                }
                assert_eq!(fit(x.view(), &y_perturbed), reference);
            }
        }
    }

    #[test]
    fn proba_table_rejects_duplicates() {
        let mut t = ProbaTable::new(vec!["a".into()]);
        t.record(0, 1, 0.3).unwrap();
        assert!(t.record(0, 1, 0.4).is_err());
        assert!(t.record(0, 2, 1.4).is_err());
        assert_eq!(t.get(0, 1), Some(0.3));
        assert_eq!(t.get(0, 2), None);
    }

    #[test]
    fn densities_need_records() {
        assert!(build_patient_densities(&ProbaTable::new(vec![]), 5).is_err());
        let mut t = ProbaTable::new(vec!["a".into()]);
        for s in 0..4 {
            t.record(0, s, 0.9).unwrap();
        }
        assert!(build_patient_densities(&t, 5).is_err());
        t.record(0, 4, 0.9).unwrap();
        let kde = build_patient_densities(&t, 5).unwrap();
        assert_eq!(kde[0].bandwidth(), crate::density::MIN_BANDWIDTH);
    }

    #[test]
    fn confident_density_samples_all_ones() {
        let kde = GaussianKde::fit(&[0.99; 6]).unwrap();
        let m = sample_intermediate_labels(&[kde], 100, 0.5, 1).unwrap();
        assert!(m.labels.iter().all(|&v| v == 1));
        assert_eq!(m, sample_intermediate_labels(&[GaussianKde::fit(&[0.99; 6]).unwrap()], 100, 0.5, 1).unwrap());
    }

    #[test]
    fn constant_sample_columns_give_zero_variance() {
        let cohort = toy_cohort(false);
        let plan = tabular::make_splits(&cohort, &SplitConfig { min_occurrences: 1, ..SplitConfig::new(8, 0.4, 5) }).unwrap();
        let settings = PipelineSettings::default();
        let spec = ModelSpec::new(ModelName::LongitGkde, ImbalanceKind::InverseFrequency);
        let y1 = cohort.y1();
        let labels = Array2::from_shape_fn((cohort.len(), 5), |(j, _)| y1[j]);
        let matrix = SampledLabelMatrix { labels, source_seed: 0 };
        let sampled = run_longitudinal(&cohort, &plan, &spec, &settings, IntermediateLabels::Sampled(&matrix)).unwrap();
        let truth = run_longitudinal(&cohort, &plan, &spec, &settings, IntermediateLabels::True).unwrap();
        assert_eq!(sampled.split_scores, truth.split_scores);
    }
}
