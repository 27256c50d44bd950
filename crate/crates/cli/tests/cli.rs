use std::path::Path;
use std::process::{Command, Output};

fn longit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longit")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_run_config(dir: &Path, models: &str) -> String {
    write(
        dir,
        "run.json",
        &format!(r#"{{"dataset": {{"synth": {{"n_patients": 90}}}}, "n_splits": 30, "k_samples": 10, "seed": 3{models}}}"#),
    )
}

#[test]
fn synth_default_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cohort.csv");
    let res = longit(&["synth", "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "patient_id,y1,y2,base_1,base_2,base_3,base_4,base_5");
    assert_eq!(lines.count(), 300);
    assert!(String::from_utf8_lossy(&res.stdout).contains("transition matrix"));
}

#[test]
fn synth_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (path, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert!(longit(&["synth", "--out", path.to_str().unwrap(), "--seed", seed]).status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn synth_rejects_alpha_length_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "synth.json", r#"{"alpha": [1.0, 2.0]}"#);
    let out = dir.path().join("x.csv");
    let res = longit(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("alpha"));
}

#[test]
fn run_with_missing_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"dataset": {"path": "nope.csv"}}"#);
    let res = longit(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn run_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"n_split": 10}"#);
    let res = longit(&["run", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn run_writes_consistent_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path(), "");
    let out = dir.path().join("out");
    let res = longit(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    let models = report["models"].as_array().unwrap();
    assert_eq!(models.len(), 6);

    let mut rdr = csv::Reader::from_path(out.join("scores.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6 * 5);
    for row in &rows {
        let model = models.iter().find(|m| m["name"] == row[0]).unwrap();
        let summary = &model["summary"][&row[1]];
        for (col, key) in [(2, "mean"), (3, "ci_low"), (4, "ci_high")] {
            let from_csv: f64 = row[col].parse().unwrap();
            assert_eq!(from_csv, summary[key].as_f64().unwrap(), "{} {} {key}", &row[0], &row[1]);
        }
    }
    for name in ["calibration.csv", "patient_probas.csv", "pca.csv", "reliability_longit_gkde.csv"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(report["seeds"]["split_plan"].is_u64());
}

#[test]
fn total_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path(), r#", "models": [{"name": "delta"}]"#);
    let res = longit(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let report = std::fs::read_to_string(dir.path().join("o/report.json")).unwrap();
    assert!(report.contains("\"failed\""));
}

#[test]
fn validate_reports_problems() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("patient_id,y1,y2,base_a\n");
    for i in 0..30 {
        let (y1, y2) = if i == 0 { (0, 1) } else { (i % 2, i % 2) };
        csv.push_str(&format!("p{i},{y1},{y2},{}\n", i as f64 / 10.0));
    }
    write(dir.path(), "cohort.csv", &csv);
    let cfg = write(dir.path(), "bad.json", r#"{"dataset": {"path": "cohort.csv"}, "models": [{"name": "delta"}]}"#);
    let res = longit(&["validate", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("fatal\tstrata\t(y1=0, y2=1): 1 patients"), "{stdout}");
    assert!(stdout.contains("fatal\tmodels\tdelta needs follow-up-1"), "{stdout}");
}

#[test]
fn validate_accepts_a_healthy_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path(), "");
    let res = longit(&["validate", "--config", &cfg]);
    assert!(res.status.success());
    assert_eq!(String::from_utf8_lossy(&res.stdout).lines().last(), Some("ok"));
}
