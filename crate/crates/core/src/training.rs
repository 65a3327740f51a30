//! Minibatch SGD with optional layer freezing.
//!
//! One epoch is a seeded Fisher–Yates shuffle of the sample indices
//! followed by sequential minibatch steps; the last batch may be short
//! and its gradient is the mean over the rows it actually holds. Frozen
//! layers (weights and biases together) are skipped by the update, which
//! also means their L2 gradient never applies — freezing pins the layer
//! exactly.
//!
//! Shuffle seeding: epoch `e` uses `seeding::epoch_rng(shuffle_seed, e)`.
//! Because that stream depends only on `shuffle_seed + e`, a caller can
//! hand out `shuffle_seed + k` to make a later call continue the exact
//! epoch sequence of an earlier one — federated cycles rely on this to
//! align with flat single-site training.

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::nn::{self, Gradients, Matrix, Model};
use crate::seeding;

/// Hyperparameters for one call to [`train`].
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 coefficient, applied to weights only.
    pub lambda: f64,
    pub shuffle_seed: u64,
    /// `freeze_mask[l] == true` pins layer `l` (weights and biases).
    /// `None` trains every layer.
    pub freeze_mask: Option<Vec<bool>>,
}

impl TrainSpec {
    fn validate(&self, model: &Model) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive and finite"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be non-negative and finite"));
        }
        if let Some(mask) = &self.freeze_mask {
            if mask.len() != model.num_layers() {
                return Err(Error::shape(format!(
                    "freeze mask has {} entries for {} layers",
                    mask.len(),
                    model.num_layers()
                )));
            }
        }
        Ok(())
    }
}

/// The index order visited in epoch `epoch` of a run seeded with
/// `shuffle_seed`. Exposed so tests can replay the exact batches.
pub fn epoch_permutation(shuffle_seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::epoch_rng(shuffle_seed, epoch as u64);
    order.shuffle(&mut rng);
    order
}

/// One SGD update from precomputed gradients, honoring the freeze mask.
fn apply_step(model: &mut Model, grads: &Gradients, learning_rate: f64, mask: Option<&[bool]>) {
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        if mask.is_some_and(|m| m[l]) {
            continue;
        }
        layer.weights.scaled_add(-learning_rate, &grads.weights[l]);
        layer.biases.scaled_add(-learning_rate, &grads.biases[l]);
    }
}

/// Trains a copy of `model` on `(x, labels)` and returns it. The input
/// model is untouched. `epochs == 0` returns a bit-identical copy.
pub fn train(model: &Model, x: &Matrix, labels: &[u8], spec: &TrainSpec) -> Result<Model> {
    spec.validate(model)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!("{n} rows but {} labels", labels.len())));
    }
    if x.ncols() != model.input_dim() {
        return Err(Error::shape(format!(
            "data has {} features, model expects {}",
            x.ncols(),
            model.input_dim()
        )));
    }

    let mut current = model.clone();
    let mask = spec.freeze_mask.as_deref();
    for epoch in 0..spec.epochs {
        let order = epoch_permutation(spec.shuffle_seed, epoch, n);
        for chunk in order.chunks(spec.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| labels[i]).collect();
            let (_, cache) = current.forward(&xb)?;
            let grads = nn::backward(&current, &cache, &yb, spec.lambda)?;
            apply_step(&mut current, &grads, spec.learning_rate, mask);
        }
    }
    Ok(current)
}

/// Pools every silo's training split (ascending silo id) into one matrix
/// and trains on it — the all-data-in-one-place reference regime.
pub fn train_centralized(
    silos: &[crate::data::SiloDataset],
    model: &Model,
    spec: &TrainSpec,
) -> Result<Model> {
    use crate::audit::AccessScope;
    use crate::data::Split;

    if silos.is_empty() {
        return Err(Error::invalid("no silos given"));
    }
    let mut order: Vec<&crate::data::SiloDataset> = silos.iter().collect();
    order.sort_by(|a, b| a.silo_id().cmp(b.silo_id()));

    let scope = AccessScope::unaudited();
    let mut parts = Vec::with_capacity(order.len());
    let mut labels = Vec::new();
    for silo in order {
        let (xs, ys) = silo.split_data(Split::Train, &scope);
        parts.push(xs);
        labels.extend(ys);
    }
    let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::shape(format!("pooling training splits: {e}")))?;
    train(model, &x, &labels, spec)
}

/// Training-objective value (mean data loss plus L2 term) of `model` on
/// `(x, labels)`.
pub fn dataset_loss(model: &Model, x: &Matrix, labels: &[u8], lambda: f64) -> Result<f64> {
    let probs = model.predict(x)?;
    nn::loss(&probs, labels, model, lambda)
}
