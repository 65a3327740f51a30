//! Two-stage federated-averaging-plus-local training.
//!
//! Stage 1 trains a shared model with federated averaging. Stage 2
//! freezes the first layer of that shared model — the representation
//! every silo helped shape — and retrains the remaining layers locally
//! at each silo, yielding one specialized model per silo. Predictions
//! route by silo id to the silo's own model.
//!
//! The shared first layer is an invariant of [`SpecializedEnsemble`]:
//! every member's first layer is bit-identical to the stage-1 model's.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::DataAccessAudit;
use crate::data::{SiloDataset, Split};
use crate::error::{Error, Result};
use crate::federated::{self, AggregationWeighting, CycleTrace, FedConfig};
use crate::nn::{Matrix, Model};
use crate::seeding::{self, silo_tag};
use crate::training::{self, TrainSpec};

/// Seed-stream tag separating stage-2 shuffles from every other use of
/// the master seed.
const TAG_STAGE2: u64 = 0x05;

#[derive(Debug, Clone)]
pub struct FadlConfig {
    /// Stage-1 federated cycles (T1).
    pub stage1_cycles: usize,
    /// Local epochs per silo per stage-1 cycle.
    pub stage1_local_epochs: usize,
    /// Per-silo local epochs in stage 2 (E2). Zero is allowed and leaves
    /// every specialized model equal to the shared one.
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub master_seed: u64,
}

impl FadlConfig {
    fn stage1(&self) -> FedConfig {
        FedConfig {
            global_cycles: self.stage1_cycles,
            local_epochs: self.stage1_local_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lambda: self.lambda,
            master_seed: self.master_seed,
            weighting: AggregationWeighting::ByTrainCount,
        }
    }
}

/// What `predict_routed` does for a silo id with no specialized model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownSiloPolicy {
    /// Fail with a not-found error (default posture: an unknown silo is
    /// probably a wiring bug).
    Reject,
    /// Score with the stage-1 shared model.
    FallbackToShared,
}

/// Stage-1 shared model plus one specialized model per silo.
#[derive(Debug, Clone)]
pub struct SpecializedEnsemble {
    shared: Model,
    per_silo: BTreeMap<String, Model>,
}

impl SpecializedEnsemble {
    /// Validates the defining invariant: every specialized model has the
    /// shared model's shape and a bit-identical first layer.
    pub fn new(shared: Model, per_silo: BTreeMap<String, Model>) -> Result<SpecializedEnsemble> {
        if per_silo.is_empty() {
            return Err(Error::invalid("ensemble needs at least one silo model"));
        }
        for (silo_id, model) in &per_silo {
            if !model.same_shape(&shared) {
                return Err(Error::shape(format!(
                    "silo {silo_id} model shape differs from the shared model"
                )));
            }
            let a = &model.layers()[0];
            let b = &shared.layers()[0];
            let weights_match =
                a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            let biases_match =
                a.biases.iter().zip(b.biases.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !(weights_match && biases_match) {
                return Err(Error::invalid(format!(
                    "silo {silo_id} model does not share the frozen first layer"
                )));
            }
        }
        Ok(SpecializedEnsemble { shared, per_silo })
    }

    pub fn shared_model(&self) -> &Model {
        &self.shared
    }

    pub fn silo_ids(&self) -> impl Iterator<Item = &str> {
        self.per_silo.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.per_silo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_silo.is_empty()
    }

    pub fn model_for(&self, silo_id: &str) -> Option<&Model> {
        self.per_silo.get(silo_id)
    }

    /// Scores `x` with the model specialized for `silo_id`.
    pub fn predict_routed(
        &self,
        silo_id: &str,
        x: &Matrix,
        policy: UnknownSiloPolicy,
    ) -> Result<Array1<f64>> {
        match self.per_silo.get(silo_id) {
            Some(model) => model.predict(x),
            None => match policy {
                UnknownSiloPolicy::Reject => {
                    Err(Error::NotFound(format!("no specialized model for silo `{silo_id}`")))
                }
                UnknownSiloPolicy::FallbackToShared => self.shared.predict(x),
            },
        }
    }

    /// Writes the ensemble as a directory: a JSON manifest plus one
    /// model file per member.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.shared.save(dir.join("shared.fadl1"))?;
        let width = self.per_silo.len().saturating_sub(1).to_string().len().max(3);
        let mut entries = Vec::with_capacity(self.per_silo.len());
        for (k, (silo_id, model)) in self.per_silo.iter().enumerate() {
            let file = format!("silo_{k:0width$}.fadl1");
            model.save(dir.join(&file))?;
            entries.push(EnsembleEntry { id: silo_id.clone(), file });
        }
        let manifest = EnsembleManifest { shared: "shared.fadl1".to_string(), silos: entries };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join("ensemble.json"), text)?;
        Ok(())
    }

    /// Reads a directory written by [`SpecializedEnsemble::save_dir`],
    /// re-validating the shared-first-layer invariant.
    pub fn load_dir(dir: &Path) -> Result<SpecializedEnsemble> {
        let manifest_path = dir.join("ensemble.json");
        let manifest: EnsembleManifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let shared = Model::load(dir.join(&manifest.shared))?;
        let mut per_silo = BTreeMap::new();
        for entry in manifest.silos {
            let model = Model::load(dir.join(&entry.file))?;
            if per_silo.insert(entry.id.clone(), model).is_some() {
                return Err(Error::invalid(format!(
                    "ensemble manifest lists silo `{}` twice",
                    entry.id
                )));
            }
        }
        SpecializedEnsemble::new(shared, per_silo)
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    shared: String,
    silos: Vec<EnsembleEntry>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleEntry {
    id: String,
    file: String,
}

/// Runs both stages and returns the ensemble plus the stage-1 trace.
/// Like federated averaging, per-silo work only reads that silo's data.
pub fn run_fadl(
    silos: &[SiloDataset],
    init: &Model,
    config: &FadlConfig,
    audit: &DataAccessAudit,
) -> Result<(SpecializedEnsemble, CycleTrace)> {
    let (shared, trace) = federated::run_federated(silos, init, &config.stage1(), audit)?;

    let mut freeze_first = vec![false; shared.num_layers()];
    freeze_first[0] = true;

    let specialized: Vec<(String, Model)> = silos
        .par_iter()
        .map(|silo| {
            let scope = audit.scope(silo.silo_id());
            let (x, y) = silo.split_data(Split::Train, &scope);
            let spec = TrainSpec {
                epochs: config.stage2_epochs,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                lambda: config.lambda,
                shuffle_seed: seeding::derive(
                    config.master_seed,
                    &[TAG_STAGE2, silo_tag(silo.silo_id())],
                ),
                freeze_mask: Some(freeze_first.clone()),
            };
            let model = training::train(&shared, &x, &y, &spec)?;
            Ok((silo.silo_id().to_string(), model))
        })
        .collect::<Result<_>>()?;

    let ensemble = SpecializedEnsemble::new(shared, specialized.into_iter().collect())?;
    Ok((ensemble, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, GenSpec, SiloSizes};

    fn cohort(n_silos: usize, seed: u64) -> Vec<SiloDataset> {
        let spec = GenSpec {
            n_silos,
            sizes: SiloSizes::Fixed(60),
            feature_dim: 6,
            heterogeneity: 0.8,
            target_prevalence: 0.3,
            seed,
        };
        let silos = data::generate(&spec).unwrap();
        let (silos, _) = data::split_all(&silos, [0.7, 0.1, 0.2], seed).unwrap();
        silos
    }

    fn config() -> FadlConfig {
        FadlConfig {
            stage1_cycles: 2,
            stage1_local_epochs: 2,
            stage2_epochs: 3,
            batch_size: 8,
            learning_rate: 0.3,
            lambda: 0.001,
            master_seed: 7,
        }
    }

    #[test]
    fn stage2_keeps_first_layer_and_moves_the_rest() {
        let silos = cohort(3, 1);
        let init = Model::init(&[6, 5, 3, 1], 2).unwrap();
        let audit = DataAccessAudit::new();
        let (ensemble, _) = run_fadl(&silos, &init, &config(), &audit).unwrap();

        assert_eq!(ensemble.len(), 3);
        let shared = ensemble.shared_model();
        for id in ["h000", "h001", "h002"] {
            let model = ensemble.model_for(id).unwrap();
            assert_eq!(model.layers()[0].weights, shared.layers()[0].weights);
            assert_eq!(model.layers()[0].biases, shared.layers()[0].biases);
            assert_ne!(
                model.layers()[1].weights,
                shared.layers()[1].weights,
                "silo {id} second layer should have specialized"
            );
        }
    }

    #[test]
    fn specialized_models_differ_between_silos() {
        let silos = cohort(2, 2);
        let init = Model::init(&[6, 5, 1], 3).unwrap();
        let (ensemble, _) = run_fadl(&silos, &init, &config(), &DataAccessAudit::new()).unwrap();
        let a = ensemble.model_for("h000").unwrap();
        let b = ensemble.model_for("h001").unwrap();
        assert!(!a.bit_identical(b), "different silos should specialize differently");
    }

    #[test]
    fn stage1_matches_standalone_federated_run() {
        let silos = cohort(3, 3);
        let init = Model::init(&[6, 5, 1], 4).unwrap();
        let cfg = config();
        let (ensemble, fadl_trace) =
            run_fadl(&silos, &init, &cfg, &DataAccessAudit::new()).unwrap();
        let (fed_model, fed_trace) =
            federated::run_federated(&silos, &init, &cfg.stage1(), &DataAccessAudit::new())
                .unwrap();
        assert!(ensemble.shared_model().bit_identical(&fed_model));
        assert_eq!(fadl_trace, fed_trace);
    }

    #[test]
    fn zero_stage2_epochs_reduces_to_the_shared_model() {
        let silos = cohort(2, 4);
        let init = Model::init(&[6, 5, 1], 5).unwrap();
        let mut cfg = config();
        cfg.stage2_epochs = 0;
        let (ensemble, _) = run_fadl(&silos, &init, &cfg, &DataAccessAudit::new()).unwrap();
        for id in ["h000", "h001"] {
            assert!(ensemble.model_for(id).unwrap().bit_identical(ensemble.shared_model()));
        }
    }

    #[test]
    fn run_is_deterministic() {
        let silos = cohort(3, 5);
        let init = Model::init(&[6, 5, 1], 6).unwrap();
        let (e1, t1) = run_fadl(&silos, &init, &config(), &DataAccessAudit::new()).unwrap();
        let (e2, t2) = run_fadl(&silos, &init, &config(), &DataAccessAudit::new()).unwrap();
        assert!(e1.shared_model().bit_identical(e2.shared_model()));
        for id in e1.silo_ids() {
            assert!(e1.model_for(id).unwrap().bit_identical(e2.model_for(id).unwrap()));
        }
        assert_eq!(t1, t2);
    }

    #[test]
    fn audit_sees_no_cross_silo_reads() {
        let silos = cohort(3, 6);
        let init = Model::init(&[6, 5, 1], 7).unwrap();
        let audit = DataAccessAudit::new();
        run_fadl(&silos, &init, &config(), &audit).unwrap();
        assert_eq!(audit.cross_silo_accesses(), 0);
        assert!(audit.total_accesses() > 0);
    }

    #[test]
    fn specialization_does_not_hurt_local_training_loss() {
        // With a gentle learning rate, stage-2 local epochs should only
        // lower (or hold) each silo's own training objective relative to
        // the shared stage-1 model — on this fixture, not universally.
        let silos = cohort(4, 11);
        let init = Model::init(&[6, 5, 1], 13).unwrap();
        let mut cfg = config();
        cfg.learning_rate = 0.05;
        cfg.stage2_epochs = 10;
        let (ensemble, _) = run_fadl(&silos, &init, &cfg, &DataAccessAudit::new()).unwrap();

        let scope = crate::audit::AccessScope::unaudited();
        for silo in &silos {
            let (x, y) = silo.split_data(Split::Train, &scope);
            let shared_loss =
                crate::training::dataset_loss(ensemble.shared_model(), &x, &y, cfg.lambda).unwrap();
            let local_loss = crate::training::dataset_loss(
                ensemble.model_for(silo.silo_id()).unwrap(),
                &x,
                &y,
                cfg.lambda,
            )
            .unwrap();
            assert!(
                local_loss <= shared_loss + 1e-9,
                "silo {}: specialized loss {local_loss} above shared {shared_loss}",
                silo.silo_id()
            );
        }
    }

    #[test]
    fn routing_uses_the_silo_model_and_policies_govern_unknowns() {
        let silos = cohort(2, 7);
        let init = Model::init(&[6, 5, 1], 8).unwrap();
        let (ensemble, _) = run_fadl(&silos, &init, &config(), &DataAccessAudit::new()).unwrap();

        let x = silos[0].rows_matrix(&[0, 1, 2], &crate::audit::AccessScope::unaudited());
        let routed = ensemble.predict_routed("h000", &x, UnknownSiloPolicy::Reject).unwrap();
        let direct = ensemble.model_for("h000").unwrap().predict(&x).unwrap();
        assert_eq!(routed, direct);

        let err = ensemble.predict_routed("h999", &x, UnknownSiloPolicy::Reject).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)), "{err}");

        let fallback =
            ensemble.predict_routed("h999", &x, UnknownSiloPolicy::FallbackToShared).unwrap();
        let shared = ensemble.shared_model().predict(&x).unwrap();
        assert_eq!(fallback, shared);
    }

    #[test]
    fn ensemble_new_rejects_broken_invariants() {
        let silos = cohort(2, 8);
        let init = Model::init(&[6, 5, 1], 9).unwrap();
        let (ensemble, _) = run_fadl(&silos, &init, &config(), &DataAccessAudit::new()).unwrap();
        let shared = ensemble.shared_model().clone();

        assert!(SpecializedEnsemble::new(shared.clone(), BTreeMap::new()).is_err());

        // A model with a different first layer violates the invariant.
        let stranger = Model::init(&[6, 5, 1], 99).unwrap();
        let mut members = BTreeMap::new();
        members.insert("h000".to_string(), stranger);
        let err = SpecializedEnsemble::new(shared.clone(), members).unwrap_err();
        assert!(err.to_string().contains("first layer"), "{err}");

        let wrong_shape = Model::init(&[6, 4, 1], 10).unwrap();
        let mut members = BTreeMap::new();
        members.insert("h000".to_string(), wrong_shape);
        assert!(SpecializedEnsemble::new(shared, members).is_err());
    }

    #[test]
    fn save_and_load_round_trip_bit_exactly() {
        let silos = cohort(3, 9);
        let init = Model::init(&[6, 5, 1], 11).unwrap();
        let (ensemble, _) = run_fadl(&silos, &init, &config(), &DataAccessAudit::new()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble");
        ensemble.save_dir(&path).unwrap();
        assert!(path.join("ensemble.json").exists());
        assert!(path.join("shared.fadl1").exists());
        assert!(path.join("silo_000.fadl1").exists());

        let loaded = SpecializedEnsemble::load_dir(&path).unwrap();
        assert!(loaded.shared_model().bit_identical(ensemble.shared_model()));
        assert_eq!(loaded.silo_ids().collect::<Vec<_>>(), ensemble.silo_ids().collect::<Vec<_>>());
        for id in ensemble.silo_ids() {
            assert!(loaded.model_for(id).unwrap().bit_identical(ensemble.model_for(id).unwrap()));
        }
    }

    #[test]
    fn load_rejects_tampered_member_files() {
        let silos = cohort(2, 10);
        let init = Model::init(&[6, 5, 1], 12).unwrap();
        let (ensemble, _) = run_fadl(&silos, &init, &config(), &DataAccessAudit::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble");
        ensemble.save_dir(&path).unwrap();

        // Swap one member for a model that never shared the first layer.
        Model::init(&[6, 5, 1], 1234).unwrap().save(path.join("silo_000.fadl1")).unwrap();
        let err = SpecializedEnsemble::load_dir(&path).unwrap_err();
        assert!(err.to_string().contains("first layer"), "{err}");
    }
}
