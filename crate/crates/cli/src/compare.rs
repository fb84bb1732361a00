//! Report comparison: aligned final-metrics table plus merged per-epoch
//! curves, differences taken against the first report.

use std::path::{Path, PathBuf};

use splitstream_core::{Error, MetricsReport, Result};

#[derive(Debug)]
pub struct Comparison {
    pub table: String,
    pub final_csv: String,
    pub curves_csv: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn diff_opt(a: Option<f64>, b: Option<f64>) -> String {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).to_string(),
        _ => String::new(),
    }
}

pub fn compare_reports(reports: &[(String, MetricsReport)]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::config("compare needs at least two reports".to_string()));
    }
    let task = reports[0].1.task;
    for (label, r) in reports {
        if r.task != task {
            return Err(Error::config(format!(
                "mixed task types: {label} is {:?}, first report is {task:?}",
                r.task
            )));
        }
    }
    let base = &reports[0].1.final_metrics;

    let mut final_csv = String::from(
        "run,mode,seed,accuracy,msle,rmsle,smape,d_accuracy,d_msle,d_rmsle,d_smape\n",
    );
    let mut table = format!(
        "{:<24} {:>16} {:>12} {:>12} {:>12} {:>12}\n",
        "run", "mode", "accuracy", "msle", "rmsle", "smape"
    );
    for (label, r) in reports {
        let f = &r.final_metrics;
        final_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            label,
            r.mode,
            r.seed,
            fmt_opt(f.accuracy),
            fmt_opt(f.msle),
            fmt_opt(f.rmsle),
            fmt_opt(f.smape),
            diff_opt(f.accuracy, base.accuracy),
            diff_opt(f.msle, base.msle),
            diff_opt(f.rmsle, base.rmsle),
            diff_opt(f.smape, base.smape),
        ));
        table.push_str(&format!(
            "{:<24} {:>16} {:>12} {:>12} {:>12} {:>12}\n",
            label,
            r.mode,
            f.accuracy.map(|v| format!("{v:.2}")).unwrap_or_default(),
            f.msle.map(|v| format!("{v:.6}")).unwrap_or_default(),
            f.rmsle.map(|v| format!("{v:.6}")).unwrap_or_default(),
            f.smape.map(|v| format!("{v:.4}")).unwrap_or_default(),
        ));
    }

    // Merged loss curves, one column per run, rows padded where runs differ
    // in length.
    let longest = reports.iter().map(|(_, r)| r.per_epoch.len()).max().unwrap_or(0);
    let mut curves_csv = String::from("epoch");
    for (label, _) in reports {
        curves_csv.push_str(&format!(",{label}"));
    }
    curves_csv.push('\n');
    for i in 0..longest {
        curves_csv.push_str(&(i + 1).to_string());
        for (_, r) in reports {
            match r.per_epoch.get(i) {
                Some(e) => curves_csv.push_str(&format!(",{}", e.loss)),
                None => curves_csv.push(','),
            }
        }
        curves_csv.push('\n');
    }

    Ok(Comparison { table, final_csv, curves_csv })
}

/// Loads reports from metrics.json paths (labels from the parent directory
/// names), writes compare_final.csv and compare_curves.csv under `out_dir`
/// and returns the printable table.
pub fn run_compare(paths: &[PathBuf], out_dir: &Path) -> Result<String> {
    let mut reports = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let report = MetricsReport::load(path)?;
        let label = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("report{i}"));
        reports.push((format!("{i}:{label}"), report));
    }
    let cmp = compare_reports(&reports)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::write(out_dir.join("compare_final.csv"), &cmp.final_csv)
        .map_err(|e| Error::data(format!("cannot write compare_final.csv: {e}")))?;
    std::fs::write(out_dir.join("compare_curves.csv"), &cmp.curves_csv)
        .map_err(|e| Error::data(format!("cannot write compare_curves.csv: {e}")))?;
    Ok(cmp.table)
}
