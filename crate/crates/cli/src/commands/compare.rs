use std::path::{Path, PathBuf};

use serde::Serialize;

use fedsim_core::metrics::EvalReport;

use crate::commands::train::EVAL_FILE;
use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Debug, Serialize)]
struct ComparisonRow {
    regime: String,
    run_id: String,
    dir: String,
    auc_roc: f64,
    auc_pr: f64,
    n_pos: usize,
    n_neg: usize,
    /// Differences against the centralized baseline; absent when no unique
    /// baseline exists or for the baseline row itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_auc_roc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_auc_pr: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Comparison {
    dataset_fingerprint: String,
    baseline_run: Option<String>,
    rows: Vec<ComparisonRow>,
}

/// Lines up finished runs side by side. All runs must carry the same
/// dataset fingerprint; metrics come from each run's `eval.txt` record,
/// cross-checked against its manifest.
pub fn run(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    if run_dirs.len() < 2 {
        return Err(CliError::Config("compare needs at least two run directories".into()));
    }

    let mut runs: Vec<(&PathBuf, RunManifest, EvalReport)> = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let manifest = RunManifest::load(dir)?;
        let eval_path = dir.join(EVAL_FILE);
        let text = std::fs::read_to_string(&eval_path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", eval_path.display())))?;
        let report = EvalReport::from_record(&text).map_err(CliError::data_from)?;
        if report.regime != manifest.regime
            || report.auc_roc != manifest.eval_test.auc_roc
            || report.auc_pr != manifest.eval_test.auc_pr
        {
            return Err(CliError::Data(format!(
                "{}: eval record disagrees with run manifest",
                dir.display()
            )));
        }
        runs.push((dir, manifest, report));
    }

    let fingerprint = runs[0].1.dataset_fingerprint.clone();
    for (dir, manifest, _) in &runs {
        if manifest.dataset_fingerprint != fingerprint {
            return Err(CliError::Config(format!(
                "runs were trained on different datasets: {} has fingerprint {}, {} has {}",
                run_dirs[0].display(),
                fingerprint,
                dir.display(),
                manifest.dataset_fingerprint
            )));
        }
    }

    runs.sort_by(|a, b| (&a.1.regime, &a.1.run_id).cmp(&(&b.1.regime, &b.1.run_id)));

    let central: Vec<&EvalReport> =
        runs.iter().filter(|(_, m, _)| m.regime == "central").map(|(_, _, r)| r).collect();
    let baseline = if central.len() == 1 { Some(central[0].clone()) } else { None };
    let baseline_run = if baseline.is_some() {
        runs.iter().find(|(_, m, _)| m.regime == "central").map(|(_, m, _)| m.run_id.clone())
    } else {
        None
    };

    let rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|(dir, manifest, report)| {
            let deltas = baseline
                .as_ref()
                .filter(|_| manifest.regime != "central")
                .map(|b| (report.auc_roc - b.auc_roc, report.auc_pr - b.auc_pr));
            ComparisonRow {
                regime: manifest.regime.clone(),
                run_id: manifest.run_id.clone(),
                dir: dir.display().to_string(),
                auc_roc: report.auc_roc,
                auc_pr: report.auc_pr,
                n_pos: report.n_pos,
                n_neg: report.n_neg,
                delta_auc_roc: deltas.map(|d| d.0),
                delta_auc_pr: deltas.map(|d| d.1),
            }
        })
        .collect();

    println!("dataset fingerprint: {fingerprint}");
    println!(
        "{:<8}  {:<12}  {:>9}  {:>9}  {:>10}  {:>10}",
        "regime", "run_id", "auc_roc", "auc_pr", "d_auc_roc", "d_auc_pr"
    );
    for row in &rows {
        let fmt_delta = |d: Option<f64>| d.map_or_else(|| "-".to_string(), |v| format!("{v:+.6}"));
        println!(
            "{:<8}  {:<12}  {:>9.6}  {:>9.6}  {:>10}  {:>10}",
            row.regime,
            row.run_id,
            row.auc_roc,
            row.auc_pr,
            fmt_delta(row.delta_auc_roc),
            fmt_delta(row.delta_auc_pr)
        );
    }
    if baseline.is_none() {
        println!("(no unique central run among the inputs; deltas omitted)");
    }

    if let Some(path) = out {
        let comparison = Comparison { dataset_fingerprint: fingerprint, baseline_run, rows };
        let text = serde_json::to_string_pretty(&comparison)
            .map_err(|e| CliError::Data(format!("cannot encode comparison: {e}")))?;
        std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        println!("comparison written to {}", path.display());
    }
    Ok(())
}
