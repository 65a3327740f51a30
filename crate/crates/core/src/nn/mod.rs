//! Dense feed-forward network with manual backpropagation.
//!
//! The network is a stack of fully connected layers, ReLU at hidden layers
//! and sigmoid at the output, trained against L2-regularized binary
//! cross-entropy. Everything is `f64` and deterministic: the same seed and
//! inputs reproduce the same bits, which the federated layer relies on.
//!
//! Parameters are immutable values; training and aggregation operate on
//! owned copies. `axpy` is the linear-combination primitive behind
//! sample-weighted federated averaging.

mod io;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major batch of feature rows, `batch × dim`.
pub type Matrix = Array2<f64>;

/// Probabilities clamped to `[EPS, 1 - EPS]` before any log.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// One dense layer: weights `in_dim × out_dim`, one bias per output unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Ordered stack of dense layers; the unit that is broadcast, trained,
/// and aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<LayerParams>,
    input_dim: usize,
}

impl Model {
    /// Validates and assembles a model from explicit layer parameters.
    ///
    /// Layer dims must chain, hidden layers must be ReLU, the final layer
    /// sigmoid with a single output unit.
    pub fn from_layers(layers: Vec<LayerParams>) -> Result<Model> {
        if layers.is_empty() {
            return Err(Error::invalid("model needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.ncols() != layer.biases.len() {
                return Err(Error::shape(format!(
                    "layer {i}: {} weight columns vs {} biases",
                    layer.weights.ncols(),
                    layer.biases.len()
                )));
            }
            if layer.in_dim() == 0 || layer.out_dim() == 0 {
                return Err(Error::invalid(format!("layer {i}: zero dimension")));
            }
            if i > 0 && layer.in_dim() != layers[i - 1].out_dim() {
                return Err(Error::shape(format!(
                    "layer {i} input dim {} does not match previous output dim {}",
                    layer.in_dim(),
                    layers[i - 1].out_dim()
                )));
            }
            let expect = if i == layers.len() - 1 { Activation::Sigmoid } else { Activation::Relu };
            if layer.activation != expect {
                return Err(Error::invalid(format!("layer {i}: expected {expect:?} activation")));
            }
            if !layer.weights.iter().chain(layer.biases.iter()).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("layer {i}: non-finite parameter")));
            }
        }
        if layers.last().unwrap().out_dim() != 1 {
            return Err(Error::invalid("final layer must have one output unit"));
        }
        let input_dim = layers[0].in_dim();
        Ok(Model { layers, input_dim })
    }

    /// Glorot-uniform weights, zero biases, drawn from a generator seeded by
    /// `seed`; the same `(dims, seed)` reproduces the same bits.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Model> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("need at least input and output dims"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid("all layer dims must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = layer_dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_in, fan_out), |_| {
                limit * (2.0 * rng.random::<f64>() - 1.0)
            });
            layers.push(LayerParams {
                weights,
                biases: Array1::zeros(fan_out),
                activation: if l == n_layers - 1 { Activation::Sigmoid } else { Activation::Relu },
            });
        }
        Model::from_layers(layers)
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// `[input_dim, out_0, out_1, ...]`, the shape `init` was called with.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim()));
        dims
    }

    pub fn same_shape(&self, other: &Model) -> bool {
        self.layer_dims() == other.layer_dims()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.activation == b.activation)
    }

    /// Exact bit-level parameter equality (distinguishes -0.0, NaN never
    /// occurs in valid models).
    pub fn bit_identical(&self, other: &Model) -> bool {
        self.same_shape(other)
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.biases.iter().zip(b.biases.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Forward pass over a batch; returns output probabilities and the
    /// per-layer activations backprop needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Array1<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = a.dot(&layer.weights) + &layer.biases;
            let act = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(act.clone());
            a = act;
        }
        let probs = a.index_axis(Axis(1), 0).to_owned();
        Ok((probs, ForwardCache { input: x.clone(), pre, post }))
    }

    /// Probabilities only, evaluated in row chunks to bound memory.
    pub fn predict(&self, x: &Matrix) -> Result<Array1<f64>> {
        const CHUNK: usize = 2048;
        if x.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        let n = x.nrows();
        let mut out = Array1::zeros(n);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let mut a = x.slice(s![start..end, ..]).to_owned();
            for layer in &self.layers {
                let z = a.dot(&layer.weights) + &layer.biases;
                a = z.mapv(|v| layer.activation.apply(v));
            }
            out.slice_mut(s![start..end]).assign(&a.index_axis(Axis(1), 0));
            start = end;
        }
        Ok(out)
    }
}

/// Per-layer activations from one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    /// Pre-activation z per layer, `batch × out_dim`.
    pre: Vec<Matrix>,
    /// Post-activation a per layer.
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }
}

/// Structure-matched mirror of a model holding loss derivatives.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Mean binary cross-entropy plus `lambda * sum(w^2)` over every weight
/// matrix. Biases are not penalized. Probabilities are clamped to
/// `[PROB_EPS, 1 - PROB_EPS]` so saturated outputs stay finite.
pub fn loss(probs: &Array1<f64>, labels: &[u8], model: &Model, lambda: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!("{} probs vs {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid("lambda must be >= 0"));
    }
    let mut data = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if y > 1 {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        data -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    let mut reg = 0.0;
    for layer in model.layers() {
        reg += layer.weights.iter().map(|w| w * w).sum::<f64>();
    }
    Ok(data / labels.len() as f64 + lambda * reg)
}

/// Exact gradients of `loss` for every parameter: data term averaged over
/// the batch, plus `2 * lambda * W` per weight matrix.
///
/// The data term differentiates the unclamped sigmoid/cross-entropy
/// composition, `dL/dz = (p - y) / batch`; the clamp in `loss` only
/// flattens the loss once the output is saturated past `PROB_EPS`.
pub fn backward(
    model: &Model,
    cache: &ForwardCache,
    labels: &[u8],
    lambda: f64,
) -> Result<Gradients> {
    let n_layers = model.num_layers();
    if cache.pre.len() != n_layers || cache.post.len() != n_layers {
        return Err(Error::invalid("cache layer count does not match model"));
    }
    if cache.input.ncols() != model.input_dim() {
        return Err(Error::invalid("cache was built for a different input dim"));
    }
    for (l, layer) in model.layers().iter().enumerate() {
        if cache.pre[l].ncols() != layer.out_dim() || cache.post[l].ncols() != layer.out_dim() {
            return Err(Error::invalid(format!("stale cache at layer {l}")));
        }
    }
    let batch = cache.batch_size();
    if labels.len() != batch {
        return Err(Error::invalid(format!("{} labels vs batch size {batch}", labels.len())));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid("lambda must be >= 0"));
    }

    let mut grad_w: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    let mut grad_b: Vec<Array1<f64>> = Vec::with_capacity(n_layers);

    // dL/dz at the output: (p - y) / batch, from the fused
    // sigmoid + cross-entropy derivative with mean reduction.
    let out = &cache.post[n_layers - 1];
    let mut delta = Array2::zeros(out.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        delta[[i, 0]] = (out[[i, 0]] - y as f64) / batch as f64;
    }

    for l in (0..n_layers).rev() {
        let below = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let mut dw = below.t().dot(&delta);
        if lambda > 0.0 {
            dw.scaled_add(2.0 * lambda, &model.layers()[l].weights);
        }
        grad_w.push(dw);
        grad_b.push(delta.sum_axis(Axis(0)));
        if l > 0 {
            let upstream = delta.dot(&model.layers()[l].weights.t());
            delta = match model.layers()[l - 1].activation {
                Activation::Relu => {
                    let mask = cache.pre[l - 1].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
                    upstream * mask
                }
                Activation::Sigmoid => {
                    let a = &cache.post[l - 1];
                    upstream * a.mapv(|v| v * (1.0 - v))
                }
            };
        }
    }
    grad_w.reverse();
    grad_b.reverse();
    Ok(Gradients { weights: grad_w, biases: grad_b })
}

/// Linear combination of shape-identical models:
/// `result = sum(coefficients[i] * models[i])`, parameter-wise, summed in
/// the order given. Inputs are left untouched.
pub fn axpy_model(models: &[Model], coefficients: &[f64]) -> Result<Model> {
    if models.is_empty() {
        return Err(Error::invalid("need at least one model"));
    }
    if models.len() != coefficients.len() {
        return Err(Error::invalid(format!(
            "{} models vs {} coefficients",
            models.len(),
            coefficients.len()
        )));
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite coefficient"));
    }
    for m in &models[1..] {
        if !models[0].same_shape(m) {
            return Err(Error::shape("models differ in shape"));
        }
    }
    // First term initializes the accumulator so a single model with
    // coefficient 1.0 round-trips every bit (no 0.0 + x sign games).
    let c0 = coefficients[0];
    let mut layers: Vec<LayerParams> = models[0]
        .layers()
        .iter()
        .map(|l| LayerParams {
            weights: l.weights.mapv(|w| c0 * w),
            biases: l.biases.mapv(|b| c0 * b),
            activation: l.activation,
        })
        .collect();
    for (model, &c) in models.iter().zip(coefficients).skip(1) {
        for (acc, layer) in layers.iter_mut().zip(model.layers()) {
            acc.weights.scaled_add(c, &layer.weights);
            acc.biases.scaled_add(c, &layer.biases);
        }
    }
    Model::from_layers(layers)
}
