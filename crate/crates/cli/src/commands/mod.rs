pub mod compare;
pub mod gen_data;
pub mod train;

use std::collections::BTreeSet;
use std::path::Path;

use fedsim_core::audit::AccessScope;
use fedsim_core::data::{self, SiloDataset, Split};
use fedsim_core::nn::Matrix;

use crate::manifest::DatasetManifest;
use crate::CliError;

/// Loads a cohort directory: checks every file hash against the manifest,
/// reads each silo CSV, and applies the manifest's stratified split.
/// Returns the silos in ascending id order plus any split warnings.
pub fn load_cohort(
    data_dir: &Path,
) -> Result<(DatasetManifest, Vec<SiloDataset>, Vec<String>), CliError> {
    let manifest = DatasetManifest::load(data_dir)?;
    manifest.verify(data_dir)?;

    let mut silos = Vec::with_capacity(manifest.files.len());
    let mut seen = BTreeSet::new();
    for entry in &manifest.files {
        let path = data_dir.join(&entry.file);
        let loaded =
            data::load_csv(&path, Some(manifest.feature_dim)).map_err(CliError::data_from)?;
        let [silo] = <[SiloDataset; 1]>::try_from(loaded).map_err(|v| {
            CliError::Data(format!(
                "{} holds {} silos, expected exactly one ({:?})",
                path.display(),
                v.len(),
                entry.silo_id
            ))
        })?;
        if silo.silo_id() != entry.silo_id {
            return Err(CliError::Data(format!(
                "{} holds silo {:?}, manifest expects {:?}",
                path.display(),
                silo.silo_id(),
                entry.silo_id
            )));
        }
        if silo.len() != entry.n_samples {
            return Err(CliError::Data(format!(
                "{} holds {} samples, manifest records {}",
                path.display(),
                silo.len(),
                entry.n_samples
            )));
        }
        if !seen.insert(silo.silo_id().to_string()) {
            return Err(CliError::Data(format!("duplicate silo id {:?}", silo.silo_id())));
        }
        silos.push(silo);
    }
    silos.sort_by(|a, b| a.silo_id().cmp(b.silo_id()));

    let (silos, split_warnings) = data::split_all(&silos, manifest.split, manifest.split_seed)
        .map_err(CliError::data_from)?;
    let warnings =
        split_warnings.into_iter().map(|w| format!("silo {}: {}", w.silo_id, w.message)).collect();
    Ok((manifest, silos, warnings))
}

/// Scores one split of every silo and concatenates the results in silo
/// order. `scorer` sees the silo so a routed ensemble can pick its model.
pub fn pooled_scores(
    silos: &[SiloDataset],
    split: Split,
    scorer: &dyn Fn(&SiloDataset, &Matrix) -> fedsim_core::Result<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<u8>), CliError> {
    let scope = AccessScope::unaudited();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for silo in silos {
        let (x, y) = silo.split_data(split, &scope);
        if x.nrows() == 0 {
            continue;
        }
        scores.extend(scorer(silo, &x).map_err(CliError::train_from)?);
        labels.extend(y);
    }
    Ok((scores, labels))
}
