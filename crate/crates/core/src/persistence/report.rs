use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{FisherPoint, ScalingReport, REPORT_SCHEMA_VERSION};
use crate::inference::COVERAGE_TARGET;

/// Pretty JSON with struct-declared key order, shortest round-trip floats
/// and a trailing newline. Missing values are `Option`s, so no float field
/// is ever NaN.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// A JSON artifact tagged with its kind and schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub kind: String,
    pub data: T,
}

pub fn write_document<T: Serialize>(kind: &str, data: &T, path: &Path) -> Result<()> {
    let doc = Document {
        schema_version: REPORT_SCHEMA_VERSION,
        kind: kind.to_string(),
        data,
    };
    std::fs::write(path, to_canonical_json(&doc)?)?;
    Ok(())
}

fn check_version(v: &serde_json::Value) -> Result<()> {
    let found = v
        .get("schema_version")
        .and_then(|s| s.as_u64())
        .unwrap_or(0) as u32;
    if found != REPORT_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            expected: REPORT_SCHEMA_VERSION,
            found,
        });
    }
    Ok(())
}

pub fn read_document<T: DeserializeOwned>(kind: &str, path: &Path) -> Result<T> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    check_version(&v)?;
    let found = v.get("kind").and_then(|k| k.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::Format(format!(
            "{} holds a {found:?} document, expected {kind:?}",
            path.display()
        )));
    }
    let doc: Document<T> = serde_json::from_value(v)?;
    Ok(doc.data)
}

/// Files produced by [`write_report`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportPaths {
    pub json: PathBuf,
    pub csv: Vec<PathBuf>,
    pub plotdata: Vec<PathBuf>,
}

impl ReportPaths {
    pub fn all(&self) -> impl Iterator<Item = &PathBuf> {
        std::iter::once(&self.json)
            .chain(&self.csv)
            .chain(&self.plotdata)
    }
}

/// Write the full JSON report under `dir/reports/`, table projections next
/// to it and gnuplot-ready columns under `dir/plotdata/`.
pub fn write_report(report: &ScalingReport, dir: &Path) -> Result<ReportPaths> {
    let reports = dir.join("reports");
    let plots = dir.join("plotdata");
    std::fs::create_dir_all(&reports)?;
    std::fs::create_dir_all(&plots)?;
    let json = reports.join("scaling.json");
    std::fs::write(&json, to_canonical_json(report)?)?;
    let mut csv = Vec::new();
    let mut plotdata = Vec::new();
    if !report.binary.is_empty() {
        let p = reports.join("auc_grid.csv");
        std::fs::write(&p, auc_grid_csv(report)?)?;
        csv.push(p);
        let p = plots.join("auc_vs_bag_size.dat");
        std::fs::write(&p, auc_plotdata(report))?;
        plotdata.push(p);
    }
    if !report.fisher.is_empty() || !report.oracle.is_empty() {
        let p = reports.join("fisher_table.csv");
        std::fs::write(&p, fisher_table_csv(report)?)?;
        csv.push(p);
        let p = plots.join("fisher_vs_bag_size.dat");
        std::fs::write(&p, fisher_plotdata(report))?;
        plotdata.push(p);
    }
    if !report.curves.is_empty() {
        let p = plots.join("probability_curves.dat");
        std::fs::write(&p, curves_plotdata(report))?;
        plotdata.push(p);
    }
    Ok(ReportPaths {
        json,
        csv,
        plotdata,
    })
}

pub fn read_report(path: &Path) -> Result<ScalingReport> {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    check_version(&v)?;
    Ok(serde_json::from_value(v)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn status(s: impl Serialize) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// One row per (bag size, contamination) point.
pub fn auc_grid_csv(report: &ScalingReport) -> Result<String> {
    let mut rows = vec![[
        "n_b",
        "c_bkgrd",
        "n_background",
        "auc_mean",
        "auc_std",
        "oracle_auc",
        "models_ok",
        "models_failed",
        "status",
    ]
    .map(String::from)
    .to_vec()];
    for p in &report.binary {
        rows.push(vec![
            p.n_b.to_string(),
            p.c_bkgrd.to_string(),
            p.n_background.to_string(),
            opt(p.auc_mean),
            opt(p.auc_std),
            opt(p.oracle_auc),
            p.aucs.len().to_string(),
            p.models_failed.to_string(),
            status(p.status),
        ]);
    }
    csv_string(rows)
}

fn fisher_rows(scorer: &str, p: &FisherPoint) -> [Vec<String>; 2] {
    let cal = p.calibration.as_ref();
    let pct = |c: Option<f64>| opt(c.map(|c| 100.0 * c));
    [
        vec![
            scorer.into(),
            p.n_b.to_string(),
            "false".into(),
            "1".into(),
            pct(p.coverage_uncalibrated),
            opt(p.i_eff_uncalibrated),
            opt(p.bias),
            opt(p.fit_mse),
            status(p.status),
        ],
        vec![
            scorer.into(),
            p.n_b.to_string(),
            "true".into(),
            opt(cal.map(|c| c.c_cicc)),
            pct(p.coverage_calibrated),
            opt(p.i_eff_calibrated),
            opt(p.bias),
            opt(p.fit_mse),
            status(p.status),
        ],
    ]
}

/// Uncalibrated and calibrated rows per bag size, for the learned scorer
/// and (when present) the exact likelihood.
pub fn fisher_table_csv(report: &ScalingReport) -> Result<String> {
    let mut rows = vec![[
        "scorer",
        "n_b",
        "calibrated",
        "c_cicc",
        "coverage_pct",
        "mean_fisher",
        "bias",
        "fit_mse",
        "status",
    ]
    .map(String::from)
    .to_vec()];
    for (name, points) in [("ensemble", &report.fisher), ("oracle", &report.oracle)] {
        for p in points {
            rows.extend(fisher_rows(name, p));
        }
    }
    csv_string(rows)
}

fn dat(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NaN".into())
}

/// One gnuplot index block per contamination level.
pub fn auc_plotdata(report: &ScalingReport) -> String {
    let mut s = String::from("# n_b auc_mean auc_std oracle_auc\n");
    let mut fracs: Vec<f64> = Vec::new();
    for p in &report.binary {
        if !fracs.contains(&p.c_bkgrd) {
            fracs.push(p.c_bkgrd);
        }
    }
    for c in fracs {
        let _ = writeln!(s, "\n\n# c_bkgrd = {c}");
        for p in report.binary.iter().filter(|p| p.c_bkgrd == c) {
            let _ = writeln!(
                s,
                "{} {} {} {}",
                p.n_b,
                dat(p.auc_mean),
                dat(p.auc_std),
                dat(p.oracle_auc)
            );
        }
    }
    s
}

pub fn fisher_plotdata(report: &ScalingReport) -> String {
    let mut s = String::from("# n_b i_uncalibrated i_calibrated i_curv_std i_mle_se i_true_chunk i_ansatz coverage_target\n");
    for (name, points) in [("ensemble", &report.fisher), ("oracle", &report.oracle)] {
        let _ = writeln!(s, "\n\n# {name}");
        for p in points {
            let model = report
                .ansatz
                .as_ref()
                .filter(|_| name == "ensemble")
                .and_then(|a| a.points.iter().find(|q| q.n_b == p.n_b))
                .and_then(|q| q.i_eff_model);
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {}",
                p.n_b,
                dat(p.i_eff_uncalibrated),
                dat(p.i_eff_calibrated),
                dat(p.i_curv_std),
                dat(p.i_mle_se),
                p.i_true_chunk,
                dat(model),
                COVERAGE_TARGET
            );
        }
    }
    s
}

/// One block per curve: θ against ensemble probability.
pub fn curves_plotdata(report: &ScalingReport) -> String {
    let mut s = String::from("# theta probability\n");
    for c in &report.curves {
        let _ = writeln!(s, "\n\n# n_b = {} bag = {}", c.n_b, c.bag);
        for (t, p) in report.grid.iter().zip(&c.probs) {
            let _ = writeln!(s, "{t} {p}");
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{AucPoint, ExperimentConfig, PointStatus, StudyMode};

    fn point(n_b: usize, c: f64, failed: bool) -> AucPoint {
        AucPoint {
            n_b,
            c_bkgrd: c,
            n_background: 0,
            auc_mean: (!failed).then_some(0.5 + n_b as f64 / 1000.0 + 1e-17),
            auc_std: (!failed).then_some(0.1 / 3.0),
            aucs: if failed {
                vec![]
            } else {
                vec![0.51, 0.49 + 1.0 / 7.0]
            },
            oracle_auc: Some(0.62),
            test_bags_per_class: 10,
            models_failed: failed as usize,
            status: if failed {
                PointStatus::Failed
            } else {
                PointStatus::Ok
            },
            errors: if failed {
                vec!["model 0: diverged".into()]
            } else {
                vec![]
            },
        }
    }

    fn report() -> ScalingReport {
        let mut cfg = ExperimentConfig::new(StudyMode::Binary, 3);
        cfg.experiment.bag_sizes = vec![1, 10];
        cfg.experiment.background_fracs = vec![0.0, 0.4];
        ScalingReport {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: StudyMode::Binary,
            grid: cfg.grid().unwrap(),
            config: cfg,
            binary: vec![
                point(1, 0.0, false),
                point(1, 0.4, true),
                point(10, 0.0, false),
                point(10, 0.4, false),
            ],
            fisher: vec![],
            oracle: vec![],
            ansatz: None,
            curves: vec![],
            flags: vec!["failed point N_B=1 c_bkgrd=0.4".into()],
        }
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let paths = write_report(&r, dir.path()).unwrap();
        let first = std::fs::read(&paths.json).unwrap();
        let back = read_report(&paths.json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.binary[1].status, PointStatus::Failed);
        let dir2 = tempfile::tempdir().unwrap();
        let again = write_report(&back, dir2.path()).unwrap();
        assert_eq!(first, std::fs::read(again.json).unwrap());
    }

    #[test]
    fn csv_has_one_row_per_grid_point() {
        let text = auc_grid_csv(&report()).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        assert!(text.lines().nth(2).unwrap().ends_with(",failed"));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let text = to_canonical_json(&report()).unwrap().replacen(
            "\"schema_version\": 1",
            "\"schema_version\": 99",
            1,
        );
        std::fs::write(&p, text).unwrap();
        assert!(matches!(
            read_report(&p),
            Err(Error::SchemaVersion {
                expected: 1,
                found: 99
            })
        ));
    }

    #[test]
    fn documents_check_kind() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        write_document("numbers", &vec![1.5, 2.0], &p).unwrap();
        assert_eq!(
            read_document::<Vec<f64>>("numbers", &p).unwrap(),
            vec![1.5, 2.0]
        );
        assert!(matches!(
            read_document::<Vec<f64>>("other", &p),
            Err(Error::Format(_))
        ));
    }
}
