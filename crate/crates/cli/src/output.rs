//! Report files. Numbers use the shortest representation that reads back to
//! the same `f64`, in both the JSON and the CSV files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;

use longit_core::metrics::Metric;
use longit_core::pipeline::ExperimentReport;

pub const REPORT_JSON: &str = "report.json";
pub const SCORES_CSV: &str = "scores.csv";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const PATIENT_PROBAS_CSV: &str = "patient_probas.csv";
pub const PCA_CSV: &str = "pca.csv";

pub fn reliability_file(model: &str) -> String {
    format!("reliability_{model}.csv")
}

fn csv_writer(dir: &Path, name: &str) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn write_all(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_report_json(report, dir)?;
    write_scores(report, dir)?;
    write_calibration(report, dir)?;
    write_reliability(report, dir)?;
    write_patient_probas(report, dir)?;
    write_pca(report, dir)?;
    Ok(())
}

pub fn write_report_json(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    let path = dir.join(REPORT_JSON);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_scores(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    let mut w = csv_writer(dir, SCORES_CSV)?;
    w.write_record(["model", "metric", "mean", "ci_low", "ci_high", "n", "n_excluded"])?;
    for model in &report.models {
        let Some(summary) = &model.summary else { continue };
        for metric in Metric::ALL {
            let s = summary.get(metric);
            w.write_record([
                model.name.as_str(),
                metric.name(),
                &num(s.mean),
                &num(s.ci_low),
                &num(s.ci_high),
                &s.n.to_string(),
                &s.n_excluded.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_calibration(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    let mut w = csv_writer(dir, CALIBRATION_CSV)?;
    w.write_record(["split", "raw_brier", "isotonic_brier", "raw_log_loss", "isotonic_log_loss"])?;
    if let Some(c) = &report.calibration {
        for (i, s) in c.per_split.iter().enumerate() {
            w.write_record([
                i.to_string(),
                num(s.raw_brier),
                num(s.isotonic_brier),
                num(s.raw_log_loss),
                num(s.isotonic_log_loss),
            ])?;
        }
        let stats = [&c.raw_brier, &c.isotonic_brier, &c.raw_log_loss, &c.isotonic_log_loss];
        w.write_record(std::iter::once("mean".to_string()).chain(stats.iter().map(|m| num(m.mean))))?;
        w.write_record(std::iter::once("sd".to_string()).chain(stats.iter().map(|m| num(m.sd))))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_reliability(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    for (model, curve) in &report.plots.reliability {
        let mut w = csv_writer(dir, &reliability_file(model))?;
        w.write_record(["mean_predicted", "fraction_positive", "count"])?;
        for b in &curve.bins {
            w.write_record([num(b.mean_predicted), num(b.fraction_positive), b.count.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Long format: `proba` rows hold Step-1 probabilities per split, `kde` rows
/// hold the density grid.
pub fn write_patient_probas(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    let mut w = csv_writer(dir, PATIENT_PROBAS_CSV)?;
    w.write_record(["patient_id", "y1", "kind", "split", "x", "density", "bandwidth"])?;
    for p in &report.plots.patient_densities {
        let y1 = p.y1.to_string();
        let h = num(p.bandwidth);
        for &(split, proba) in &p.probas {
            w.write_record([&p.patient_id, &y1, "proba", &split.to_string(), &num(proba), "", &h])?;
        }
        for &(x, density) in &p.grid {
            w.write_record([&p.patient_id, &y1, "kde", "", &num(x), &num(density), &h])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_pca(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    let mut w = csv_writer(dir, PCA_CSV)?;
    w.write_record(["patient_id", "y1", "y2", "pc1", "pc2"])?;
    if let Some(pca) = &report.plots.pca {
        for (i, id) in pca.patient_ids.iter().enumerate() {
            w.write_record([
                id.clone(),
                pca.y1[i].to_string(),
                pca.y2[i].to_string(),
                num(pca.scores[i][0]),
                num(pca.scores[i][1]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
