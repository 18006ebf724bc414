//! The edge embedding network.
//!
//! Three parts share one trunk:
//!
//! * the embedding trunk `g`: a stack of ReLU layers from the `d` edge
//!   features to an `m`-wide embedding;
//! * the churn head `f`: ReLU layers on top of `g`, then a sigmoid of the dot
//!   product with `sigmoid_weight`;
//! * the context head: one free weight row per context edge, scored against
//!   `g` by a sampled estimate of the softmax over all context edges.
//!
//! Both `g` and `f` read only the edge features, so any edge with features can
//! be scored, whether or not it was seen in training.

mod backward;
mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeKey;

pub use backward::{backward, objective, Batch, BatchItem, ContextSample, ObjectiveValue, ObjectiveWeights, TemporalPartner};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

/// Dense layer `y = W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer { inputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    pub fn outputs(&self) -> usize {
        self.biases.len()
    }

    fn xavier<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        DenseLayer { inputs, weights: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(), biases: vec![0.0; outputs] }
    }

    /// ReLU(W x + b).
    fn forward_relu(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).max(0.0))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Widths of the embedding layers; the last one is the embedding size `m`.
    pub embed_layers: Vec<usize>,
    /// Widths of the prediction layers.
    pub pred_layers: Vec<usize>,
    pub context_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_layers: vec![50, 50], pred_layers: vec![50, 50], context_init_std: 0.01 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_layers.is_empty() || self.pred_layers.is_empty() {
            return Err(Error::Config("model needs at least one embedding and one prediction layer".into()));
        }
        if self.embed_layers.iter().chain(&self.pred_layers).any(|w| *w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.context_init_std >= 0.0 && self.context_init_std.is_finite()) {
            return Err(Error::Config("model.context_init_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Every learnable tensor of the network.
///
/// The same shape doubles as the container for gradients and optimiser moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embed: Vec<DenseLayer>,
    pub pred: Vec<DenseLayer>,
    pub sigmoid_weight: Vec<f64>,
    /// Row-major `rows x embedding_dim` softmax weights, one row per context edge.
    pub context_table: Vec<f64>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, Gaussian context rows.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, input_dim: usize, vocab_size: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        let mut embed = Vec::new();
        let mut width = input_dim;
        for &w in &config.embed_layers {
            embed.push(DenseLayer::xavier(width, w, rng));
            width = w;
        }
        let m = width;
        let mut pred = Vec::new();
        for &w in &config.pred_layers {
            pred.push(DenseLayer::xavier(width, w, rng));
            width = w;
        }
        let limit = (6.0 / (width + 1) as f64).sqrt();
        let u = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let sigmoid_weight = (0..width).map(|_| u.sample(rng)).collect();
        let mut params = ModelParams { embed, pred, sigmoid_weight, context_table: Vec::with_capacity(vocab_size * m) };
        for _ in 0..vocab_size {
            params.push_context_row(config.context_init_std, rng);
        }
        Ok(params)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            embed: self.embed.iter().map(|l| DenseLayer::zeros(l.inputs, l.outputs())).collect(),
            pred: self.pred.iter().map(|l| DenseLayer::zeros(l.inputs, l.outputs())).collect(),
            sigmoid_weight: vec![0.0; self.sigmoid_weight.len()],
            context_table: vec![0.0; self.context_table.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed[0].inputs
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed[self.embed.len() - 1].outputs()
    }

    pub fn context_rows(&self) -> usize {
        self.context_table.len() / self.embedding_dim()
    }

    pub fn context_row(&self, index: usize) -> Result<&[f64]> {
        let m = self.embedding_dim();
        let rows = self.context_rows();
        if index >= rows {
            return Err(Error::Vocab { index, size: rows });
        }
        Ok(&self.context_table[index * m..(index + 1) * m])
    }

    /// Appends one context row drawn from N(0, std²) and returns its index.
    pub fn push_context_row<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) -> usize {
        let m = self.embedding_dim();
        if std > 0.0 {
            let n = Normal::new(0.0, std).expect("valid std");
            self.context_table.extend((0..m).map(|_| n.sample(rng)));
        } else {
            self.context_table.extend(std::iter::repeat_n(0.0, m));
        }
        self.context_rows() - 1
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.embed.iter().chain(&self.pred) {
            out.push(&l.weights);
            out.push(&l.biases);
        }
        out.push(&self.sigmoid_weight);
        out.push(&self.context_table);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.embed.iter_mut().chain(self.pred.iter_mut()) {
            out.push(&mut l.weights);
            out.push(&mut l.biases);
        }
        out.push(&mut self.sigmoid_weight);
        out.push(&mut self.context_table);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Adds `scale * other` element-wise; shapes must match.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Activations of the embedding trunk, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedTape {
    /// `activations[0]` is the input; `activations[k]` the output of layer `k`.
    pub activations: Vec<Vec<f64>>,
}

/// Activations of the prediction head.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictTape {
    pub activations: Vec<Vec<f64>>,
    pub logit: f64,
    pub prob: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Largest double below one.
const PROB_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Edge embedding `g(z)`.
pub fn embed_forward(params: &ModelParams, z: &[f64]) -> Result<(Vec<f64>, EmbedTape)> {
    if z.len() != params.input_dim() {
        return Err(Error::Schema(format!("edge features have length {}, model expects {}", z.len(), params.input_dim())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite edge feature".into()));
    }
    let mut activations = Vec::with_capacity(params.embed.len() + 1);
    activations.push(z.to_vec());
    for layer in &params.embed {
        let next = layer.forward_relu(&activations[activations.len() - 1]);
        activations.push(next);
    }
    let g = activations[activations.len() - 1].clone();
    Ok((g, EmbedTape { activations }))
}

/// Churn head with its activations.
pub fn predict_forward_tape(params: &ModelParams, g: &[f64]) -> Result<PredictTape> {
    if g.len() != params.embedding_dim() {
        return Err(Error::Schema(format!("embedding has length {}, model expects {}", g.len(), params.embedding_dim())));
    }
    let mut activations = Vec::with_capacity(params.pred.len() + 1);
    activations.push(g.to_vec());
    for layer in &params.pred {
        let next = layer.forward_relu(&activations[activations.len() - 1]);
        activations.push(next);
    }
    let top = &activations[activations.len() - 1];
    let logit: f64 = top.iter().zip(&params.sigmoid_weight).map(|(h, w)| h * w).sum();
    if !logit.is_finite() {
        return Err(Error::Numeric("non-finite churn logit".into()));
    }
    let prob = sigmoid(logit).clamp(f64::MIN_POSITIVE, PROB_MAX);
    Ok(PredictTape { activations, logit, prob })
}

/// Churn probability `f(g)`, strictly inside (0, 1).
pub fn predict_forward(params: &ModelParams, g: &[f64]) -> Result<f64> {
    predict_forward_tape(params, g).map(|t| t.prob)
}

/// Churn probability of an edge straight from its features.
pub fn predict_edge(params: &ModelParams, z: &[f64]) -> Result<f64> {
    let (g, _) = embed_forward(params, z)?;
    predict_forward(params, &g)
}

/// How the softmax normaliser over context edges is estimated from negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextEstimator {
    /// `log σ(s_target) + Σ log σ(-s_neg)`.
    NegativeSampling,
    /// `s_target - log(exp(s_target) + Σ exp(s_neg))`: the softmax restricted
    /// to the target and its negatives. Exact when the negatives are every
    /// other context edge.
    #[default]
    SampledSoftmax,
}

fn check_indices(params: &ModelParams, target: usize, negatives: &[usize]) -> Result<()> {
    let rows = params.context_rows();
    for &i in std::iter::once(&target).chain(negatives) {
        if i >= rows {
            return Err(Error::Vocab { index: i, size: rows });
        }
    }
    if negatives.contains(&target) {
        return Err(Error::Data(format!("negative samples include the target {target}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Estimated `log Pr(target | g)` over context edges.
pub fn context_log_prob(
    params: &ModelParams,
    g: &[f64],
    target: usize,
    negatives: &[usize],
    estimator: ContextEstimator,
) -> Result<f64> {
    check_indices(params, target, negatives)?;
    let st = dot(g, params.context_row(target)?);
    let scores = negatives
        .iter()
        .map(|&n| params.context_row(n).map(|w| dot(g, w)))
        .collect::<Result<Vec<_>>>()?;
    let value = match estimator {
        ContextEstimator::NegativeSampling => log_sigmoid(st) + scores.iter().map(|s| log_sigmoid(-s)).sum::<f64>(),
        ContextEstimator::SampledSoftmax => {
            let max = scores.iter().copied().fold(st, f64::max);
            let sum: f64 = (st - max).exp() + scores.iter().map(|s| (s - max).exp()).sum::<f64>();
            st - max - sum.ln()
        }
    };
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite context log-probability".into()));
    }
    Ok(value)
}

/// Dense index of every context edge, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeVocabulary {
    index: BTreeMap<EdgeKey, usize>,
    edges: Vec<EdgeKey>,
}

impl EdgeVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `edge`, appending it if new.
    pub fn insert(&mut self, edge: EdgeKey) -> usize {
        if let Some(&i) = self.index.get(&edge) {
            return i;
        }
        let i = self.edges.len();
        self.index.insert(edge, i);
        self.edges.push(edge);
        i
    }

    pub fn get(&self, edge: EdgeKey) -> Option<usize> {
        self.index.get(&edge).copied()
    }

    pub fn edge(&self, index: usize) -> Option<EdgeKey> {
        self.edges.get(index).copied()
    }

    pub fn edges(&self) -> &[EdgeKey] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl FromIterator<EdgeKey> for EdgeVocabulary {
    fn from_iter<I: IntoIterator<Item = EdgeKey>>(iter: I) -> Self {
        let mut v = EdgeVocabulary::new();
        for e in iter {
            v.insert(e);
        }
        v
    }
}
