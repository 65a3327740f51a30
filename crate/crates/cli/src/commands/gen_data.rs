use std::path::Path;

use fedsim_core::data;
use fedsim_core::hashing::sha256_hex;

use crate::config::Config;
use crate::manifest::{fingerprint_files, DatasetFile, DatasetManifest, DATASET_FORMAT};
use crate::CliError;

/// Generates a synthetic cohort into `out_dir`: one CSV per silo plus a
/// manifest with per-file hashes and the whole-cohort fingerprint.
pub fn run(config: &Config, out_dir: &Path, seed_override: Option<u64>) -> Result<(), CliError> {
    let split = config.data.split;
    if split.iter().any(|r| !r.is_finite() || !(0.0..=1.0).contains(r))
        || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(CliError::Config(format!(
            "data.split must be three fractions in [0, 1] summing to 1, got {split:?}"
        )));
    }

    let spec = config.gen_spec(seed_override);
    let silos = data::generate(&spec).map_err(CliError::config_from)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut files = Vec::with_capacity(silos.len());
    let mut total = 0usize;
    let mut total_pos = 0usize;
    for silo in &silos {
        let file = format!("{}.csv", silo.silo_id());
        let path = out_dir.join(&file);
        data::save_csv(std::slice::from_ref(silo), &path).map_err(CliError::data_from)?;
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::Data(format!("cannot read back {}: {e}", path.display())))?;
        total += silo.len();
        total_pos += silo.positives();
        files.push(DatasetFile {
            file,
            silo_id: silo.silo_id().to_string(),
            sha256: sha256_hex(&bytes),
            n_samples: silo.len(),
            n_pos: silo.positives(),
        });
    }

    let pairs: Vec<(String, String)> =
        files.iter().map(|f| (f.file.clone(), f.sha256.clone())).collect();
    let fingerprint = fingerprint_files(&pairs);
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        seed: spec.seed,
        n_silos: spec.n_silos,
        feature_dim: spec.feature_dim,
        heterogeneity: spec.heterogeneity,
        target_prevalence: spec.target_prevalence,
        split,
        split_seed: spec.seed,
        files,
        fingerprint: fingerprint.clone(),
    };
    manifest.save(out_dir)?;

    println!(
        "generated {} silos, {} samples ({:.2}% positive) in {}",
        silos.len(),
        total,
        100.0 * total_pos as f64 / total.max(1) as f64,
        out_dir.display()
    );
    println!("dataset fingerprint: {fingerprint}");
    Ok(())
}
