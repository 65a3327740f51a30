//! End-to-end flows across modules: generate → split → train under each
//! regime → evaluate, plus persistence boundaries in the middle.

use fedsim_core::audit::{AccessScope, DataAccessAudit};
use fedsim_core::data::{self, GenSpec, SiloDataset, SiloSizes, Split};
use fedsim_core::fadl::{self, FadlConfig, SpecializedEnsemble, UnknownSiloPolicy};
use fedsim_core::federated::{self, AggregationWeighting, FedConfig};
use fedsim_core::metrics::EvalReport;
use fedsim_core::nn::Model;
use fedsim_core::training::{self, TrainSpec};

fn cohort(seed: u64) -> Vec<SiloDataset> {
    let spec = GenSpec {
        n_silos: 5,
        sizes: SiloSizes::Fixed(120),
        feature_dim: 12,
        heterogeneity: 0.7,
        target_prevalence: 0.25,
        seed,
    };
    let silos = data::generate(&spec).unwrap();
    let (silos, warnings) = data::split_all(&silos, [0.7, 0.1, 0.2], seed).unwrap();
    assert!(warnings.is_empty(), "unexpected warnings: {warnings:?}");
    silos
}

/// One silo's test rows: id, feature matrix, labels.
type TestBlock = (String, ndarray::Array2<f64>, Vec<u8>);

/// Pooled test-split features and labels across all silos, silo-id order,
/// with per-silo block boundaries for routed evaluation.
fn pooled_test(silos: &[SiloDataset]) -> (Vec<TestBlock>, Vec<u8>) {
    let scope = AccessScope::unaudited();
    let mut blocks = Vec::new();
    let mut all_labels = Vec::new();
    for silo in silos {
        let (x, y) = silo.split_data(Split::Test, &scope);
        all_labels.extend(y.iter().copied());
        blocks.push((silo.silo_id().to_string(), x, y));
    }
    (blocks, all_labels)
}

#[test]
fn three_regimes_train_and_evaluate_on_one_cohort() {
    let silos = cohort(31);
    let init = Model::init(&[12, 8, 4, 1], 77).unwrap();

    let train_spec = TrainSpec {
        epochs: 6,
        batch_size: 16,
        learning_rate: 0.4,
        lambda: 0.0005,
        shuffle_seed: 123,
        freeze_mask: None,
    };
    let central = training::train_centralized(&silos, &init, &train_spec).unwrap();

    let fed_config = FedConfig {
        global_cycles: 3,
        local_epochs: 2,
        batch_size: 16,
        learning_rate: 0.4,
        lambda: 0.0005,
        master_seed: 123,
        weighting: AggregationWeighting::ByTrainCount,
    };
    let audit = DataAccessAudit::new();
    let (fed_model, trace) = federated::run_federated(&silos, &init, &fed_config, &audit).unwrap();
    assert_eq!(audit.cross_silo_accesses(), 0);
    assert_eq!(trace.records.len(), 3);

    let fadl_config = FadlConfig {
        stage1_cycles: 2,
        stage1_local_epochs: 2,
        stage2_epochs: 4,
        batch_size: 16,
        learning_rate: 0.4,
        lambda: 0.0005,
        master_seed: 123,
    };
    let fadl_audit = DataAccessAudit::new();
    let (ensemble, _) = fadl::run_fadl(&silos, &init, &fadl_config, &fadl_audit).unwrap();
    assert_eq!(fadl_audit.cross_silo_accesses(), 0);

    let (blocks, labels) = pooled_test(&silos);
    let mut central_scores = Vec::new();
    let mut fed_scores = Vec::new();
    let mut fadl_scores = Vec::new();
    for (silo_id, x, _) in &blocks {
        central_scores.extend(central.predict(x).unwrap());
        fed_scores.extend(fed_model.predict(x).unwrap());
        fadl_scores.extend(ensemble.predict_routed(silo_id, x, UnknownSiloPolicy::Reject).unwrap());
    }

    for (regime, scores) in
        [("centralized", &central_scores), ("fedavg", &fed_scores), ("fadl", &fadl_scores)]
    {
        let report = EvalReport::compute(regime, scores, &labels).unwrap();
        assert!(
            (0.0..=1.0).contains(&report.auc_roc) && (0.0..=1.0).contains(&report.auc_pr),
            "{regime}: {report:?}"
        );
        assert!(report.n_pos > 0 && report.n_neg > 0);
        // Every regime should beat a coin-flip ranking on this easy,
        // well-sampled cohort.
        assert!(report.auc_roc > 0.55, "{regime} AUCROC {}", report.auc_roc);
    }
}

#[test]
fn csv_round_trip_preserves_training_bits() {
    let silos = cohort(32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cohort.csv");
    data::save_csv(&silos, &path).unwrap();
    let reloaded = data::load_csv(&path, Some(12)).unwrap();
    // Split tags do not survive CSV, so re-split both sides identically.
    let (silos, _) = data::split_all(&silos, [0.8, 0.0, 0.2], 9).unwrap();
    let (reloaded, _) = data::split_all(&reloaded, [0.8, 0.0, 0.2], 9).unwrap();

    let init = Model::init(&[12, 6, 1], 50).unwrap();
    let config = FedConfig {
        global_cycles: 2,
        local_epochs: 1,
        batch_size: 32,
        learning_rate: 0.2,
        lambda: 0.001,
        master_seed: 3,
        weighting: AggregationWeighting::ByTrainCount,
    };
    let (a, _) = federated::run_federated(&silos, &init, &config, &DataAccessAudit::new()).unwrap();
    let (b, _) =
        federated::run_federated(&reloaded, &init, &config, &DataAccessAudit::new()).unwrap();
    assert!(a.bit_identical(&b), "CSV round trip changed the training outcome");
}

#[test]
fn persisted_models_score_identically() {
    let silos = cohort(33);
    let init = Model::init(&[12, 6, 1], 51).unwrap();
    let config = FadlConfig {
        stage1_cycles: 1,
        stage1_local_epochs: 1,
        stage2_epochs: 2,
        batch_size: 16,
        learning_rate: 0.3,
        lambda: 0.0,
        master_seed: 4,
    };
    let (ensemble, _) = fadl::run_fadl(&silos, &init, &config, &DataAccessAudit::new()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let ens_dir = dir.path().join("ensemble");
    ensemble.save_dir(&ens_dir).unwrap();
    let loaded = SpecializedEnsemble::load_dir(&ens_dir).unwrap();

    let scope = AccessScope::unaudited();
    for silo in &silos {
        let (x, _) = silo.split_data(Split::Test, &scope);
        if x.nrows() == 0 {
            continue;
        }
        let before =
            ensemble.predict_routed(silo.silo_id(), &x, UnknownSiloPolicy::Reject).unwrap();
        let after = loaded.predict_routed(silo.silo_id(), &x, UnknownSiloPolicy::Reject).unwrap();
        assert_eq!(before, after, "silo {} scores changed after reload", silo.silo_id());
    }
}
