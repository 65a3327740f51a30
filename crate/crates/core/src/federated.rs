//! Federated averaging over silos.
//!
//! Each global cycle broadcasts the current global model, trains one
//! local copy per silo on that silo's training split, and replaces the
//! global model with the sample-size-weighted average of the locals:
//! the silo with `n_i` training samples contributes weight `n_i / N`.
//!
//! Determinism contract: silos are processed in ascending silo-id order
//! regardless of input order or thread count, each silo's shuffle stream
//! is derived from `(master_seed, silo_id)` plus the cycle's epoch
//! offset, and the weighted average is summed in that same canonical
//! order. Two runs over the same inputs produce bit-identical models.
//!
//! The epoch offset makes cycles splice: with one silo, `T` cycles of
//! `E` local epochs visit exactly the batch sequence of one flat
//! `T * E`-epoch run, so federation with `K = 1` reproduces single-site
//! training bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::DataAccessAudit;
use crate::data::{SiloDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{self, Model};
use crate::seeding;
use crate::training::{self, TrainSpec};

/// How aggregation weights are chosen. Weighting by training-split size
/// is the only supported policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationWeighting {
    #[default]
    ByTrainCount,
}

#[derive(Debug, Clone)]
pub struct FedConfig {
    /// Global aggregation cycles (T).
    pub global_cycles: usize,
    /// Local epochs per silo per cycle (E).
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 coefficient shared by every local run.
    pub lambda: f64,
    pub master_seed: u64,
    pub weighting: AggregationWeighting,
}

/// Aggregation weights `n_i / N`. They sum to 1 up to one ulp or so;
/// exact for equal counts.
pub fn aggregation_coefficients(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::invalid("no sample counts"));
    }
    if counts.contains(&0) {
        return Err(Error::invalid("every silo must contribute at least one sample"));
    }
    let total: u64 = counts.iter().map(|&n| n as u64).sum();
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Sample-size-weighted parameter average. Models must share a shape;
/// `counts[i]` is silo i's training-split size. With a single model the
/// result is bit-identical to it.
pub fn aggregate(models: &[Model], counts: &[usize]) -> Result<Model> {
    if models.len() != counts.len() {
        return Err(Error::invalid(format!("{} models for {} counts", models.len(), counts.len())));
    }
    let coefficients = aggregation_coefficients(counts)?;
    nn::axpy_model(models, &coefficients)
}

/// Per-cycle progress record: mean training objective of each silo's
/// local model on its own training split, plus a fingerprint of the
/// aggregated global model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// 1-based cycle index.
    pub cycle: usize,
    pub silo_train_loss: BTreeMap<String, f64>,
    /// SHA-256 of the aggregated model's serialized bytes.
    pub aggregate_checksum: String,
}

/// One record per global cycle, in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleTrace {
    pub records: Vec<CycleRecord>,
}

impl CycleTrace {
    /// One JSON object per line, keys in stable order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<CycleTrace> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(CycleTrace { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CycleTrace> {
        CycleTrace::from_jsonl(&fs::read_to_string(path)?)
    }
}

/// Canonical processing order: indices into `silos` sorted by id, with
/// duplicate ids rejected.
fn canonical_order(silos: &[SiloDataset]) -> Result<Vec<usize>> {
    if silos.is_empty() {
        return Err(Error::invalid("no silos given"));
    }
    let mut order: Vec<usize> = (0..silos.len()).collect();
    order.sort_by(|&a, &b| silos[a].silo_id().cmp(silos[b].silo_id()));
    for pair in order.windows(2) {
        if silos[pair[0]].silo_id() == silos[pair[1]].silo_id() {
            return Err(Error::invalid(format!(
                "duplicate silo id `{}`",
                silos[pair[0]].silo_id()
            )));
        }
    }
    Ok(order)
}

/// Runs federated averaging from `init` and returns the final global
/// model with its per-cycle trace. Silo data is only read inside that
/// silo's own local training step, under an audit scope naming the silo;
/// `audit.cross_silo_accesses()` staying 0 verifies isolation.
pub fn run_federated(
    silos: &[SiloDataset],
    init: &Model,
    config: &FedConfig,
    audit: &DataAccessAudit,
) -> Result<(Model, CycleTrace)> {
    if config.global_cycles == 0 {
        return Err(Error::invalid("global_cycles must be >= 1"));
    }
    if config.local_epochs == 0 {
        return Err(Error::invalid("local_epochs must be >= 1"));
    }
    let order = canonical_order(silos)?;
    for &i in &order {
        if silos[i].feature_dim() != init.input_dim() {
            return Err(Error::shape(format!(
                "silo {} has {} features, model expects {}",
                silos[i].silo_id(),
                silos[i].feature_dim(),
                init.input_dim()
            )));
        }
        if silos[i].split_len(Split::Train) == 0 {
            return Err(Error::invalid(format!(
                "silo {} has an empty training split",
                silos[i].silo_id()
            )));
        }
    }

    let counts: Vec<usize> = order.iter().map(|&i| silos[i].split_len(Split::Train)).collect();
    let silo_seeds: Vec<u64> = order
        .iter()
        .map(|&i| seeding::silo_stream(config.master_seed, silos[i].silo_id()))
        .collect();

    let mut global = init.clone();
    let mut trace = CycleTrace::default();
    for t in 0..config.global_cycles {
        // Cycle t continues each silo's epoch stream at offset t * E, so
        // consecutive cycles replay one uninterrupted local schedule.
        let epoch_offset = (t * config.local_epochs) as u64;
        let locals: Vec<(Model, f64)> = order
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let silo = &silos[i];
                let scope = audit.scope(silo.silo_id());
                let (x, y) = silo.split_data(Split::Train, &scope);
                let spec = TrainSpec {
                    epochs: config.local_epochs,
                    batch_size: config.batch_size,
                    learning_rate: config.learning_rate,
                    lambda: config.lambda,
                    shuffle_seed: silo_seeds[k].wrapping_add(epoch_offset),
                    freeze_mask: None,
                };
                let local = training::train(&global, &x, &y, &spec)?;
                let loss = training::dataset_loss(&local, &x, &y, config.lambda)?;
                Ok((local, loss))
            })
            .collect::<Result<_>>()?;

        let (models, losses): (Vec<Model>, Vec<f64>) = locals.into_iter().unzip();
        global = aggregate(&models, &counts)?;

        let silo_train_loss = order
            .iter()
            .zip(&losses)
            .map(|(&i, &loss)| (silos[i].silo_id().to_string(), loss))
            .collect();
        trace.records.push(CycleRecord {
            cycle: t + 1,
            silo_train_loss,
            aggregate_checksum: crate::hashing::sha256_hex(&global.to_bytes()),
        });
    }
    Ok((global, trace))
}
