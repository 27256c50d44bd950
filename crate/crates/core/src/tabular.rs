//! Cohort data model, CSV ingestion, stratified split plans and min-max scaling.
//!
//! A cohort file is a wide CSV with one row per patient:
//!
//! ```text
//! patient_id,y1,y2,[months_fu1],[months_fu2],[covariates...],base_*,fu1_*
//! ```
//!
//! `fu1_*` cells may be empty, but only all together for a given row.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::{self, stream};
use crate::{Error, Result};

pub const BASELINE_PREFIX: &str = "base_";
pub const FU1_PREFIX: &str = "fu1_";
pub const MONTHS_FU1: &str = "months_fu1";
pub const MONTHS_FU2: &str = "months_fu2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub baseline: Vec<f64>,
    pub fu1: Option<Vec<f64>>,
    pub covariates: Vec<f64>,
    pub y1: u8,
    pub y2: u8,
}

impl PatientRecord {
    /// Joint stratification key in `0..4`: `2 * y1 + y2`.
    pub fn stratum(&self) -> usize {
        2 * self.y1 as usize + self.y2 as usize
    }
}

/// Validated, immutable patient table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
    feature_names_baseline: Vec<String>,
    feature_names_fu1: Vec<String>,
    covariate_names: Vec<String>,
}

impl Cohort {
    pub fn new(
        patients: Vec<PatientRecord>,
        feature_names_baseline: Vec<String>,
        feature_names_fu1: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let m = feature_names_baseline.len();
        let mut seen = HashSet::with_capacity(patients.len());
        for p in &patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate patient_id `{}`",
                    p.patient_id
                )));
            }
            if p.y1 > 1 || p.y2 > 1 {
                return Err(Error::Validation(format!(
                    "patient `{}` has a non-binary label (y1={}, y2={})",
                    p.patient_id, p.y1, p.y2
                )));
            }
            if p.baseline.len() != m {
                return Err(Error::Validation(format!(
                    "patient `{}` has {} baseline values, expected {m}",
                    p.patient_id,
                    p.baseline.len()
                )));
            }
            if let Some(fu1) = &p.fu1 {
                if fu1.len() != feature_names_fu1.len() {
                    return Err(Error::Validation(format!(
                        "patient `{}` has {} fu1 values, expected {}",
                        p.patient_id,
                        fu1.len(),
                        feature_names_fu1.len()
                    )));
                }
            }
            if p.covariates.len() != covariate_names.len() {
                return Err(Error::Validation(format!(
                    "patient `{}` has {} covariates, expected {}",
                    p.patient_id,
                    p.covariates.len(),
                    covariate_names.len()
                )));
            }
            let all_finite = p
                .baseline
                .iter()
                .chain(p.covariates.iter())
                .chain(p.fu1.iter().flatten())
                .all(|v| v.is_finite());
            if !all_finite {
                return Err(Error::Validation(format!(
                    "patient `{}` has a non-finite value",
                    p.patient_id
                )));
            }
        }
        Ok(Self {
            patients,
            feature_names_baseline,
            feature_names_fu1,
            covariate_names,
        })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn feature_names_baseline(&self) -> &[String] {
        &self.feature_names_baseline
    }

    pub fn feature_names_fu1(&self) -> &[String] {
        &self.feature_names_fu1
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn y1(&self) -> Vec<u8> {
        self.patients.iter().map(|p| p.y1).collect()
    }

    pub fn y2(&self) -> Vec<u8> {
        self.patients.iter().map(|p| p.y2).collect()
    }

    pub fn has_fu1(&self) -> bool {
        !self.feature_names_fu1.is_empty() && self.patients.iter().any(|p| p.fu1.is_some())
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// `n × M` matrix of baseline features.
    pub fn baseline_matrix(&self) -> Array2<f64> {
        let m = self.feature_names_baseline.len();
        Array2::from_shape_fn((self.len(), m), |(i, j)| self.patients[i].baseline[j])
    }

    /// Counts of patients per joint `(y1, y2)` stratum, indexed by `2 * y1 + y2`.
    pub fn stratum_sizes(&self) -> [usize; 4] {
        let mut sizes = [0; 4];
        for p in &self.patients {
            sizes[p.stratum()] += 1;
        }
        sizes
    }
}

/// Which optional columns to pick up as covariates, in addition to
/// `months_fu1` / `months_fu2` which are always taken when present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub covariates: Vec<String>,
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Cohort> {
    let file = std::fs::File::open(path)?;
    read_cohort(file, schema)
}

pub fn read_cohort<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let missing = |name: &str| Error::Parse {
        row: 1,
        column: name.to_string(),
        message: "required column is missing from the header".into(),
    };
    let id_col = find("patient_id").ok_or_else(|| missing("patient_id"))?;
    let y1_col = find("y1").ok_or_else(|| missing("y1"))?;
    let y2_col = find("y2").ok_or_else(|| missing("y2"))?;

    let mut covariate_cols = Vec::new();
    for name in [MONTHS_FU1, MONTHS_FU2] {
        if let Some(c) = find(name) {
            if !schema.covariates.iter().any(|s| s == name) {
                covariate_cols.push((name.to_string(), c));
            }
        }
    }
    for name in &schema.covariates {
        let c = find(name).ok_or_else(|| missing(name))?;
        covariate_cols.push((name.clone(), c));
    }
    // Keep the file's column order for covariates.
    covariate_cols.sort_by_key(|&(_, c)| c);

    let prefixed = |prefix: &str| -> Vec<(String, usize)> {
        headers
            .iter()
            .enumerate()
            .filter_map(|(c, h)| h.strip_prefix(prefix).map(|n| (n.to_string(), c)))
            .collect()
    };
    let base_cols = prefixed(BASELINE_PREFIX);
    let fu1_cols = prefixed(FU1_PREFIX);
    if base_cols.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: format!("{BASELINE_PREFIX}*"),
            message: "no baseline feature columns".into(),
        });
    }

    let mut patients = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Line number in the file, header being line 1.
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let number = |name: &str, c: usize| -> Result<f64> {
            let text = cell(c);
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("expected a finite number, found `{text}`"),
                })
        };
        let label = |name: &str, c: usize| -> Result<u8> {
            match cell(c) {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Validation(format!(
                    "row {row}, column {name}: label must be 0 or 1, found `{other}`"
                ))),
            }
        };

        let patient_id = cell(id_col).to_string();
        if patient_id.is_empty() {
            return Err(Error::Parse {
                row,
                column: "patient_id".into(),
                message: "empty patient_id".into(),
            });
        }
        let y1 = label("y1", y1_col)?;
        let y2 = label("y2", y2_col)?;
        let covariates = covariate_cols
            .iter()
            .map(|(n, c)| number(n, *c))
            .collect::<Result<Vec<_>>>()?;
        let baseline = base_cols
            .iter()
            .map(|(n, c)| {
                if cell(*c).is_empty() {
                    Err(Error::Validation(format!(
                        "row {row}: patient `{patient_id}` is missing baseline feature `{BASELINE_PREFIX}{n}`"
                    )))
                } else {
                    number(&format!("{BASELINE_PREFIX}{n}"), *c)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let empty = fu1_cols.iter().filter(|(_, c)| cell(*c).is_empty()).count();
        let fu1 = if fu1_cols.is_empty() || empty == fu1_cols.len() {
            None
        } else if empty == 0 {
            Some(
                fu1_cols
                    .iter()
                    .map(|(n, c)| number(&format!("{FU1_PREFIX}{n}"), *c))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            return Err(Error::Validation(format!(
                "row {row}: patient `{patient_id}` has {empty} of {} fu1 cells empty; fu1 must be all present or all absent",
                fu1_cols.len()
            )));
        };

        patients.push(PatientRecord {
            patient_id,
            baseline,
            fu1,
            covariates,
            y1,
            y2,
        });
    }

    Cohort::new(
        patients,
        base_cols.into_iter().map(|(n, _)| n).collect(),
        fu1_cols.into_iter().map(|(n, _)| n).collect(),
        covariate_cols.into_iter().map(|(n, _)| n).collect(),
    )
}

/// Writes the canonical column order:
/// `patient_id, y1, y2, covariates..., base_*..., fu1_*...`.
pub fn write_cohort<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = vec!["patient_id".into(), "y1".into(), "y2".into()];
    header.extend(cohort.covariate_names.iter().cloned());
    header.extend(
        cohort
            .feature_names_baseline
            .iter()
            .map(|n| format!("{BASELINE_PREFIX}{n}")),
    );
    header.extend(
        cohort
            .feature_names_fu1
            .iter()
            .map(|n| format!("{FU1_PREFIX}{n}")),
    );
    wtr.write_record(&header)?;

    let n_fu1 = cohort.feature_names_fu1.len();
    for p in &cohort.patients {
        let mut row: Vec<String> = vec![p.patient_id.clone(), p.y1.to_string(), p.y2.to_string()];
        row.extend(p.covariates.iter().map(f64::to_string));
        row.extend(p.baseline.iter().map(f64::to_string));
        match &p.fu1 {
            Some(v) => row.extend(v.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), n_fu1)),
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_cohort(cohort, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_splits: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub min_occurrences: usize,
    pub max_retries: usize,
}

impl SplitConfig {
    pub fn new(n_splits: usize, test_fraction: f64, seed: u64) -> Self {
        Self {
            n_splits,
            test_fraction,
            seed,
            min_occurrences: 5,
            max_retries: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Ascending patient indices.
    pub train: Vec<usize>,
    /// Ascending patient indices.
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub splits: Vec<Split>,
    pub test_fraction: f64,
    pub seed: u64,
    /// Index of the re-draw that satisfied `min_occurrences` (0 = first try).
    pub attempt: usize,
}

impl SplitPlan {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    /// Number of test sets each patient falls into.
    pub fn test_occurrences(&self, n_patients: usize) -> Vec<usize> {
        let mut counts = vec![0; n_patients];
        for split in &self.splits {
            for &i in &split.test {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// Repeated stratified shuffle splits over the joint `(y1, y2)` label.
pub fn make_splits(cohort: &Cohort, config: &SplitConfig) -> Result<SplitPlan> {
    let strata: Vec<usize> = cohort.patients.iter().map(PatientRecord::stratum).collect();
    make_splits_for_strata(&strata, config)
}

/// Same as [`make_splits`] for an explicit stratum key per row (`0..4`).
pub fn make_splits_for_strata(strata: &[usize], config: &SplitConfig) -> Result<SplitPlan> {
    if !(config.test_fraction > 0.0 && config.test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {}",
            config.test_fraction
        )));
    }
    if config.n_splits == 0 {
        return Err(Error::InvalidArgument("n_splits must be at least 1".into()));
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 4];
    for (i, &s) in strata.iter().enumerate() {
        if s >= 4 {
            return Err(Error::InvalidArgument(format!("stratum key {s} out of range")));
        }
        groups[s].push(i);
    }
    for (s, g) in groups.iter().enumerate() {
        if g.len() == 1 {
            return Err(Error::StratumTooSmall {
                y1: (s / 2) as u8,
                y2: (s % 2) as u8,
                size: 1,
            });
        }
    }
    let test_sizes: Vec<usize> = groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                0
            } else {
                let t = (g.len() as f64 * config.test_fraction).round() as usize;
                t.clamp(1, g.len() - 1)
            }
        })
        .collect();

    if config.n_splits < config.min_occurrences {
        return Err(Error::OccurrencesUnsatisfiable {
            min_occurrences: config.min_occurrences,
            retries: 0,
        });
    }

    for attempt in 0..=config.max_retries {
        let attempt_seed = seed::derive_seed(config.seed, stream::SPLIT_PLAN, attempt as u64);
        let splits: Vec<Split> = (0..config.n_splits)
            .map(|i| {
                let mut rng = seed::derived_rng(attempt_seed, stream::SPLIT_PLAN, i as u64);
                let mut test = Vec::new();
                let mut train = Vec::new();
                for (g, &t) in groups.iter().zip(&test_sizes) {
                    let mut members = g.clone();
                    members.shuffle(&mut rng);
                    test.extend_from_slice(&members[..t]);
                    train.extend_from_slice(&members[t..]);
                }
                test.sort_unstable();
                train.sort_unstable();
                Split { train, test }
            })
            .collect();
        let plan = SplitPlan {
            splits,
            test_fraction: config.test_fraction,
            seed: config.seed,
            attempt,
        };
        if plan
            .test_occurrences(strata.len())
            .iter()
            .all(|&c| c >= config.min_occurrences)
        {
            return Ok(plan);
        }
    }
    Err(Error::OccurrencesUnsatisfiable {
        min_occurrences: config.min_occurrences,
        retries: config.max_retries,
    })
}

/// Per-feature min-max scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// Fits on the given rows of `x` only.
    pub fn fit(x: ArrayView2<'_, f64>, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot fit a normalizer on zero rows".into(),
            ));
        }
        let d = x.ncols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for &r in rows {
            for (j, &v) in x.row(r).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite("normalizer input"));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)` clipped to `[0, 1]`; constant features map to 0.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
        Ok(out)
    }

    fn scale(&self, j: usize, v: f64) -> f64 {
        let range = self.max[j] - self.min[j];
        if range <= 0.0 {
            0.0
        } else {
            ((v - self.min[j]) / range).clamp(0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    const SMALL: &str = "patient_id,y1,y2,base_a,base_b\np1,0,1,1.5,2\np2,1,1,-3,0.25\np3,0,0,4,8\n";

    #[test]
    fn loads_small_file_and_round_trips() {
        let cohort = read_cohort(SMALL.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(cohort.len(), 3);
        assert_eq!(cohort.feature_names_baseline(), ["a", "b"]);
        assert_eq!(cohort.patients()[1].baseline, vec![-3.0, 0.25]);
        assert_eq!(cohort.y2(), vec![1, 1, 0]);

        let mut buf = Vec::new();
        write_cohort(&cohort, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "patient_id,y1,y2,base_a,base_b\np1,0,1,1.5,2\np2,1,1,-3,0.25\np3,0,0,4,8\n"
        );
        let again = read_cohort(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(again, cohort);
    }

    #[test]
    fn rejects_non_binary_label() {
        let text = "patient_id,y1,y2,base_a\np1,0,2,1\np2,1,1,2\n";
        let err = read_cohort(text.as_bytes(), &ColumnSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = "patient_id,y1,y2,base_a\np1,0,1,1\np1,1,1,2\n";
        let err = read_cohort(text.as_bytes(), &ColumnSchema::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_cell_reports_row_and_column() {
        let text = "patient_id,y1,y2,base_a\np1,0,1,1\np2,1,1,abc\n";
        match read_cohort(text.as_bytes(), &ColumnSchema::default()).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "base_a");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_baseline_cell_is_rejected() {
        let text = "patient_id,y1,y2,base_a,base_b\np1,0,1,1,\n";
        assert!(read_cohort(text.as_bytes(), &ColumnSchema::default()).is_err());
    }

    #[test]
    fn fu1_all_or_none() {
        let text = "patient_id,y1,y2,months_fu1,base_a,fu1_a,fu1_b\n\
                    p1,0,1,3,1,2,3\n\
                    p2,1,1,4,1,,\n";
        let cohort = read_cohort(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(cohort.patients()[0].fu1, Some(vec![2.0, 3.0]));
        assert_eq!(cohort.patients()[1].fu1, None);
        assert_eq!(cohort.covariate_names(), ["months_fu1"]);

        let partial = "patient_id,y1,y2,base_a,fu1_a,fu1_b\np1,0,1,1,2,\n";
        assert!(read_cohort(partial.as_bytes(), &ColumnSchema::default()).is_err());
    }

    #[test]
    fn schema_covariates_are_required() {
        let schema = ColumnSchema {
            covariates: vec!["age".into()],
        };
        assert!(read_cohort(SMALL.as_bytes(), &schema).is_err());
        let text = "patient_id,age,y1,y2,base_a\np1,60,0,1,1\n";
        let cohort = read_cohort(text.as_bytes(), &schema).unwrap();
        assert_eq!(cohort.patients()[0].covariates, vec![60.0]);
    }

    fn strata_cohort(sizes: [usize; 4]) -> Vec<usize> {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat_n(s, n))
            .collect()
    }

    #[test]
    fn singleton_stratum_is_an_error() {
        let strata = strata_cohort([1, 1, 1, 1]);
        let mut cfg = SplitConfig::new(1, 0.5, 0);
        cfg.min_occurrences = 0;
        let err = make_splits_for_strata(&strata, &cfg).unwrap_err();
        assert!(matches!(err, Error::StratumTooSmall { size: 1, .. }), "{err}");
    }

    #[test]
    fn splits_are_stratified_and_deterministic() {
        let strata = strata_cohort([40, 17, 0, 23]);
        let cfg = SplitConfig::new(50, 0.4, 11);
        let plan = make_splits_for_strata(&strata, &cfg).unwrap();
        assert_eq!(plan.len(), 50);
        for split in &plan.splits {
            let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..strata.len()).collect::<Vec<_>>());
            for s in 0..4 {
                let n_s = strata.iter().filter(|&&k| k == s).count() as f64;
                let t_s = split.test.iter().filter(|&&i| strata[i] == s).count() as f64;
                assert!((t_s - 0.4 * n_s).abs() <= 1.0);
            }
        }
        assert_eq!(plan, make_splits_for_strata(&strata, &cfg).unwrap());
        assert_ne!(
            plan,
            make_splits_for_strata(&strata, &SplitConfig::new(50, 0.4, 12)).unwrap()
        );
        assert!(plan.test_occurrences(strata.len()).iter().all(|&c| c >= 5));
    }

    #[test]
    fn too_few_splits_for_min_occurrences() {
        let strata = strata_cohort([10, 10, 10, 10]);
        let err = make_splits_for_strata(&strata, &SplitConfig::new(3, 0.4, 0)).unwrap_err();
        assert!(matches!(err, Error::OccurrencesUnsatisfiable { .. }));
    }

    #[test]
    fn normalizer_min_max_rules() {
        let x = array![[2.0, 5.0], [4.0, 5.0], [6.0, 5.0], [8.0, -1.0]];
        let norm = Normalizer::fit(x.view(), &[0, 1, 2]).unwrap();
        assert_eq!(norm.min, vec![2.0, 5.0]);
        assert_eq!(norm.max, vec![6.0, 5.0]);
        let out = norm.apply(x.view()).unwrap();
        assert_eq!(out[[1, 0]], 0.5);
        assert_eq!(out[[3, 0]], 1.0);
        assert!(out.column(1).iter().all(|&v| v == 0.0));
        assert!(norm.apply(array![[1.0]].view()).is_err());
    }
}
