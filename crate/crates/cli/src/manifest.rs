//! On-disk manifests tying artifacts to the inputs that produced them.
//!
//! A dataset directory carries `dataset.json` with a per-file SHA-256 and a
//! whole-cohort fingerprint; every run directory carries `run.json` naming
//! that fingerprint, so `compare` can refuse to line up results computed on
//! different data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fedsim_core::hashing::sha256_hex;
use fedsim_core::metrics::EvalReport;

use crate::CliError;

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const RUN_MANIFEST: &str = "run.json";

pub const DATASET_FORMAT: &str = "fedsim-dataset/1";
pub const RUN_FORMAT: &str = "fedsim-run/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    /// Generator seed the cohort was drawn with.
    pub seed: u64,
    pub n_silos: usize,
    pub feature_dim: usize,
    pub heterogeneity: f64,
    pub target_prevalence: f64,
    /// Train/validation/test fractions applied at load time.
    pub split: [f64; 3],
    /// Seed for the per-silo stratified split, applied at load time so the
    /// CSV files themselves stay split-agnostic.
    pub split_seed: u64,
    /// One entry per silo CSV, sorted by file name.
    pub files: Vec<DatasetFile>,
    /// SHA-256 over the sorted `file:hash` lines below; identifies the
    /// cohort as a whole.
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub file: String,
    pub silo_id: String,
    pub sha256: String,
    pub n_samples: usize,
    pub n_pos: usize,
}

/// Fingerprint over a set of (file name, content hash) pairs: hash of the
/// newline-joined `name:hash` lines in ascending file-name order.
pub fn fingerprint_files(entries: &[(String, String)]) -> String {
    let mut lines: Vec<String> =
        entries.iter().map(|(name, hash)| format!("{name}:{hash}")).collect();
    lines.sort();
    sha256_hex(lines.join("\n").as_bytes())
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(DATASET_MANIFEST);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("cannot encode dataset manifest: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("invalid {}: {e}", path.display())))?;
        if manifest.format != DATASET_FORMAT {
            return Err(CliError::Data(format!(
                "unsupported dataset manifest format {:?} (expected {DATASET_FORMAT:?})",
                manifest.format
            )));
        }
        Ok(manifest)
    }

    /// Recompute every file hash and compare against the manifest. Any
    /// missing or altered file is a data error.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for entry in &self.files {
            let path = dir.join(&entry.file);
            let bytes = std::fs::read(&path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let actual = sha256_hex(&bytes);
            if actual != entry.sha256 {
                return Err(CliError::Data(format!(
                    "hash mismatch for {}: manifest records {}, file has {actual}",
                    path.display(),
                    entry.sha256
                )));
            }
        }
        let pairs: Vec<(String, String)> =
            self.files.iter().map(|f| (f.file.clone(), f.sha256.clone())).collect();
        let fp = fingerprint_files(&pairs);
        if fp != self.fingerprint {
            return Err(CliError::Data(format!(
                "dataset fingerprint mismatch: manifest records {}, files hash to {fp}",
                self.fingerprint
            )));
        }
        Ok(())
    }
}

/// Data-access counters observed during a run; cross-silo must stay zero
/// for the federated regimes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccessCounts {
    pub total: u64,
    pub cross_silo: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    /// Deterministic 12-hex id derived from regime, dataset fingerprint,
    /// seeds, and hyperparameters.
    pub run_id: String,
    pub regime: String,
    pub init_seed: u64,
    /// Shuffle seed (central) or master seed (fedavg/fadl).
    pub regime_seed: u64,
    pub dataset_fingerprint: String,
    /// Snapshot of the resolved configuration.
    pub config: serde_json::Value,
    /// Pooled test-split metrics; duplicated in `eval.txt` as a plain-text
    /// record.
    pub eval_test: EvalReport,
    /// Pooled validation-split metrics when the split is non-empty and has
    /// both classes.
    pub eval_val: Option<EvalReport>,
    /// Per-silo test metrics for the specialized regime; silos whose test
    /// split has a single class are skipped with a warning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_silo_test: Option<BTreeMap<String, EvalReport>>,
    /// Relative artifact path -> SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub data_accesses: Option<AccessCounts>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds; informational only and excluded from the run id.
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Train(format!("cannot encode run manifest: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::Train(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(RUN_MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("invalid {}: {e}", path.display())))?;
        if manifest.format != RUN_FORMAT {
            return Err(CliError::Data(format!(
                "unsupported run manifest format {:?} (expected {RUN_FORMAT:?})",
                manifest.format
            )));
        }
        Ok(manifest)
    }
}

/// Deterministic run id: first 12 hex digits of a hash over everything that
/// shapes the artifacts (regime, data, seeds, hyperparameters) — and nothing
/// that does not, so reruns of the same experiment share an id.
pub fn run_id(
    regime: &str,
    dataset_fingerprint: &str,
    init_seed: u64,
    regime_seed: u64,
    config: &serde_json::Value,
) -> String {
    let payload =
        format!("{regime}\n{dataset_fingerprint}\ninit={init_seed}\nseed={regime_seed}\n{config}");
    sha256_hex(payload.as_bytes())[..12].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_is_order_insensitive_but_content_sensitive() {
        let a = vec![("h000.csv".into(), "aa".into()), ("h001.csv".into(), "bb".into())];
        let b = vec![("h001.csv".into(), "bb".into()), ("h000.csv".into(), "aa".into())];
        assert_eq!(fingerprint_files(&a), fingerprint_files(&b));

        let c = vec![("h000.csv".into(), "aa".into()), ("h001.csv".into(), "bc".into())];
        assert_ne!(fingerprint_files(&a), fingerprint_files(&c));
    }

    #[test]
    fn run_id_depends_on_each_input() {
        let cfg = serde_json::json!({"lr": 0.01});
        let base = run_id("fedavg", "fp", 1, 2, &cfg);
        assert_eq!(base.len(), 12);
        assert_eq!(base, run_id("fedavg", "fp", 1, 2, &cfg));
        assert_ne!(base, run_id("fadl", "fp", 1, 2, &cfg));
        assert_ne!(base, run_id("fedavg", "fp2", 1, 2, &cfg));
        assert_ne!(base, run_id("fedavg", "fp", 3, 2, &cfg));
        assert_ne!(base, run_id("fedavg", "fp", 1, 3, &cfg));
        assert_ne!(base, run_id("fedavg", "fp", 1, 2, &serde_json::json!({"lr": 0.02})));
    }

    #[test]
    fn dataset_manifest_round_trips_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("h000.csv");
        std::fs::write(&file, b"silo_id,label,features\nh000,1,0;2\n").unwrap();
        let hash = sha256_hex(&std::fs::read(&file).unwrap());
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            seed: 42,
            n_silos: 1,
            feature_dim: 3,
            heterogeneity: 0.7,
            target_prevalence: 0.055,
            split: [0.7, 0.1, 0.2],
            split_seed: 42,
            files: vec![DatasetFile {
                file: "h000.csv".into(),
                silo_id: "h000".into(),
                sha256: hash.clone(),
                n_samples: 1,
                n_pos: 1,
            }],
            fingerprint: fingerprint_files(&[("h000.csv".into(), hash)]),
        };
        manifest.save(dir.path()).unwrap();
        let loaded = DatasetManifest::load(dir.path()).unwrap();
        loaded.verify(dir.path()).unwrap();

        std::fs::write(&file, b"silo_id,label,features\nh000,0,0;2\n").unwrap();
        let err = loaded.verify(dir.path()).unwrap_err();
        assert!(matches!(err, CliError::Data(_)), "tampered file must be a data error: {err}");
    }
}
