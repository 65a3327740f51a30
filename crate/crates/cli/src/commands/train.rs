use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use fedsim_core::audit::DataAccessAudit;
use fedsim_core::data::{SiloDataset, Split};
use fedsim_core::fadl::{self, UnknownSiloPolicy};
use fedsim_core::federated;
use fedsim_core::hashing::sha256_hex;
use fedsim_core::metrics::EvalReport;
use fedsim_core::nn::{Matrix, Model};
use fedsim_core::training;

use crate::commands::{load_cohort, pooled_scores};
use crate::config::Config;
use crate::manifest::{run_id, AccessCounts, RunManifest, RUN_FORMAT};
use crate::CliError;

pub const MODEL_FILE: &str = "model.fadl1";
pub const ENSEMBLE_DIR: &str = "ensemble";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const EVAL_FILE: &str = "eval.txt";

type Scorer = Box<dyn Fn(&SiloDataset, &Matrix) -> fedsim_core::Result<Vec<f64>>>;

/// Trains one regime on a generated cohort, evaluates it on the pooled
/// test split, and writes the model, trace, eval record, and run manifest
/// into `out_dir`.
pub fn run(
    config: &Config,
    data_dir: &Path,
    out_dir: &Path,
    mode: &str,
    seed_override: Option<u64>,
) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let (dataset_manifest, silos, mut warnings) = load_cohort(data_dir)?;
    for silo in &silos {
        if silo.split_len(Split::Train) == 0 {
            return Err(CliError::Data(format!(
                "silo {} has an empty training split under ratios {:?}",
                silo.silo_id(),
                dataset_manifest.split
            )));
        }
    }

    let dims = config.layer_dims(dataset_manifest.feature_dim);
    let init = Model::init(&dims, config.model.init_seed).map_err(CliError::config_from)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Train(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut artifacts = BTreeMap::new();
    let mut per_silo_test = None;
    let mut data_accesses = None;
    let regime_seed;
    let scorer: Scorer;

    match mode {
        "central" => {
            let spec = config.central_spec(seed_override);
            regime_seed = spec.shuffle_seed;
            let model = training::train_centralized(&silos, &init, &spec).map_err(training_err)?;
            save_model(&model, out_dir, MODEL_FILE, &mut artifacts)?;
            scorer = Box::new(move |_, x| model.predict(x).map(|s| s.to_vec()));
        }
        "fedavg" => {
            let fed = config.fedavg_config(seed_override);
            regime_seed = fed.master_seed;
            let audit = DataAccessAudit::default();
            let (model, trace) =
                federated::run_federated(&silos, &init, &fed, &audit).map_err(training_err)?;
            data_accesses = Some(check_audit(&audit)?);
            save_model(&model, out_dir, MODEL_FILE, &mut artifacts)?;
            save_text(&trace_text(&trace)?, out_dir, TRACE_FILE, &mut artifacts)?;
            scorer = Box::new(move |_, x| model.predict(x).map(|s| s.to_vec()));
        }
        "fadl" => {
            let cfg = config.fadl_config(seed_override);
            regime_seed = cfg.master_seed;
            let audit = DataAccessAudit::default();
            let (ensemble, trace) =
                fadl::run_fadl(&silos, &init, &cfg, &audit).map_err(training_err)?;
            data_accesses = Some(check_audit(&audit)?);
            let ensemble_dir = out_dir.join(ENSEMBLE_DIR);
            ensemble.save_dir(&ensemble_dir).map_err(CliError::train_from)?;
            hash_dir(&ensemble_dir, ENSEMBLE_DIR, &mut artifacts)?;
            save_text(&trace_text(&trace)?, out_dir, TRACE_FILE, &mut artifacts)?;

            per_silo_test = Some(eval_per_silo(&ensemble, &silos, mode, &mut warnings)?);
            scorer = Box::new(move |silo: &SiloDataset, x: &Matrix| {
                ensemble
                    .predict_routed(silo.silo_id(), x, UnknownSiloPolicy::Reject)
                    .map(|s| s.to_vec())
            });
        }
        other => return Err(CliError::Config(format!("unknown mode {other:?}"))),
    }

    let (test_scores, test_labels) = pooled_scores(&silos, Split::Test, scorer.as_ref())?;
    let eval_test = EvalReport::compute(mode, &test_scores, &test_labels).map_err(|e| match e {
        fedsim_core::Error::UndefinedMetric(_) => CliError::data_from(e),
        _ => CliError::train_from(e),
    })?;
    save_text(&eval_test.to_record(), out_dir, EVAL_FILE, &mut artifacts)?;

    let (val_scores, val_labels) = pooled_scores(&silos, Split::Val, scorer.as_ref())?;
    let eval_val = if val_labels.is_empty() {
        None
    } else {
        match EvalReport::compute(mode, &val_scores, &val_labels) {
            Ok(report) => Some(report),
            Err(fedsim_core::Error::UndefinedMetric(msg)) => {
                warnings.push(format!("validation metrics undefined: {msg}"));
                None
            }
            Err(e) => return Err(CliError::train_from(e)),
        }
    };

    let config_json = config.resolved_json();
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        run_id: run_id(
            mode,
            &dataset_manifest.fingerprint,
            config.model.init_seed,
            regime_seed,
            &config_json,
        ),
        regime: mode.to_string(),
        init_seed: config.model.init_seed,
        regime_seed,
        dataset_fingerprint: dataset_manifest.fingerprint.clone(),
        config: config_json,
        eval_test: eval_test.clone(),
        eval_val,
        per_silo_test,
        artifacts,
        data_accesses,
        warnings,
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.save(out_dir)?;

    println!("run {} ({mode}): {}", manifest.run_id, config.describe_mode(mode));
    println!(
        "test auc_roc {:.6}  auc_pr {:.6}  (n_pos {}, n_neg {})",
        eval_test.auc_roc, eval_test.auc_pr, eval_test.n_pos, eval_test.n_neg
    );
    for warning in &manifest.warnings {
        eprintln!("warning: {warning}");
    }
    println!("artifacts in {}", out_dir.display());
    Ok(manifest)
}

/// Training-phase error mapping: the cohort was already validated, so an
/// invalid-argument error here means a bad hyperparameter from the config
/// file; anything else is a genuine training failure.
fn training_err(e: fedsim_core::Error) -> CliError {
    match e {
        fedsim_core::Error::InvalidArgument(msg) => CliError::Config(msg),
        e => CliError::Train(e.to_string()),
    }
}

/// The training loops must never read rows on behalf of another silo; a
/// nonzero counter means the isolation invariant broke, which is a bug
/// worth failing the run over.
fn check_audit(audit: &DataAccessAudit) -> Result<AccessCounts, CliError> {
    let counts =
        AccessCounts { total: audit.total_accesses(), cross_silo: audit.cross_silo_accesses() };
    if counts.cross_silo != 0 {
        return Err(CliError::Train(format!(
            "isolation violated: {} cross-silo row accesses recorded",
            counts.cross_silo
        )));
    }
    Ok(counts)
}

fn trace_text(trace: &federated::CycleTrace) -> Result<String, CliError> {
    trace.to_jsonl().map_err(CliError::train_from)
}

fn save_model(
    model: &Model,
    out_dir: &Path,
    rel: &str,
    artifacts: &mut BTreeMap<String, String>,
) -> Result<(), CliError> {
    let bytes = model.to_bytes();
    std::fs::write(out_dir.join(rel), &bytes)
        .map_err(|e| CliError::Train(format!("cannot write {rel}: {e}")))?;
    artifacts.insert(rel.to_string(), sha256_hex(&bytes));
    Ok(())
}

fn save_text(
    text: &str,
    out_dir: &Path,
    rel: &str,
    artifacts: &mut BTreeMap<String, String>,
) -> Result<(), CliError> {
    std::fs::write(out_dir.join(rel), text)
        .map_err(|e| CliError::Train(format!("cannot write {rel}: {e}")))?;
    artifacts.insert(rel.to_string(), sha256_hex(text.as_bytes()));
    Ok(())
}

/// Hashes every file in `dir` into the artifact map under `prefix/name`.
fn hash_dir(
    dir: &Path,
    prefix: &str,
    artifacts: &mut BTreeMap<String, String>,
) -> Result<(), CliError> {
    let mut names = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Train(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let entry =
            entry.map_err(|e| CliError::Train(format!("cannot list {}: {e}", dir.display())))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    for name in names {
        let bytes = std::fs::read(dir.join(&name))
            .map_err(|e| CliError::Train(format!("cannot read {prefix}/{name}: {e}")))?;
        artifacts.insert(format!("{prefix}/{name}"), sha256_hex(&bytes));
    }
    Ok(())
}

/// Per-silo test metrics for the specialized ensemble. Silos whose test
/// split lacks both classes are skipped with a warning instead of failing
/// the run.
fn eval_per_silo(
    ensemble: &fadl::SpecializedEnsemble,
    silos: &[SiloDataset],
    mode: &str,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<String, EvalReport>, CliError> {
    let scope = fedsim_core::audit::AccessScope::unaudited();
    let mut out = BTreeMap::new();
    for silo in silos {
        let (x, y) = silo.split_data(Split::Test, &scope);
        if x.nrows() == 0 {
            warnings.push(format!(
                "silo {}: empty test split, skipped in per-silo metrics",
                silo.silo_id()
            ));
            continue;
        }
        let scores = ensemble
            .predict_routed(silo.silo_id(), &x, UnknownSiloPolicy::Reject)
            .map_err(CliError::train_from)?
            .to_vec();
        match EvalReport::compute(mode, &scores, &y) {
            Ok(report) => {
                out.insert(silo.silo_id().to_string(), report);
            }
            Err(fedsim_core::Error::UndefinedMetric(_)) => {
                warnings.push(format!(
                    "silo {}: single-class test split, skipped in per-silo metrics",
                    silo.silo_id()
                ));
            }
            Err(e) => return Err(CliError::train_from(e)),
        }
    }
    Ok(out)
}
