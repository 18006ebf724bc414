//! Joint objective over a batch and its exact gradient.
//!
//! Each item is one edge at one day. Its forward pass is shared by the
//! supervised residual, its context terms and the temporal pair that starts
//! at it, so every summand for that edge backpropagates through one tape.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{dot, embed_forward, log_sigmoid, predict_forward_tape, sigmoid, ContextEstimator, DenseLayer, EmbedTape, ModelParams, PredictTape};
use crate::error::{Error, Result};

/// Items per gradient chunk; chunks are reduced in index order so the result
/// does not depend on the thread count.
const CHUNK: usize = 32;

/// One context edge of an example with its negative samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSample {
    pub target: usize,
    pub negatives: Vec<usize>,
}

/// The same edge on the following day.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalPartner {
    pub z_next: Vec<f64>,
    /// Features at the last observed day; the hinge reference when the item is censored.
    pub z_reference: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub z: Vec<f64>,
    /// The edge is gone on the next day.
    pub churned: bool,
    /// The label is observed. Censored items skip the supervised and context terms.
    pub observed: bool,
    pub contexts: Vec<ContextSample>,
    pub temporal: Option<TemporalPartner>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn observed_count(&self) -> usize {
        self.items.iter().filter(|i| i.observed).count()
    }
}

/// Multipliers of the four objective components.
///
/// `regularization` scales `Σ λ_k ‖P_k‖²`, where `lambdas` are ordered as
/// embedding weights, embedding biases, prediction weights, prediction biases
/// and the sigmoid weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub supervised: f64,
    pub unsupervised: f64,
    pub temporal: f64,
    pub regularization: f64,
    pub lambdas: [f64; 5],
}

impl ObjectiveWeights {
    pub fn zero() -> Self {
        ObjectiveWeights { supervised: 0.0, unsupervised: 0.0, temporal: 0.0, regularization: 0.0, lambdas: [0.0; 5] }
    }
}

/// Unweighted components and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ObjectiveValue {
    pub supervised: f64,
    pub unsupervised: f64,
    pub temporal: f64,
    pub regularization: f64,
    pub total: f64,
}

/// Partial result of one chunk: dense network gradient, sparse context rows.
struct Partial {
    net: Option<ModelParams>,
    context: BTreeMap<usize, Vec<f64>>,
    supervised: f64,
    unsupervised: f64,
    temporal: f64,
}

/// A forward pass kept for backpropagation, with accumulated output gradients.
struct Pass {
    embed: EmbedTape,
    pred: PredictTape,
    dg: Vec<f64>,
    dlogit: f64,
}

impl Pass {
    fn run(params: &ModelParams, z: &[f64]) -> Result<Self> {
        let (g, embed) = embed_forward(params, z)?;
        let pred = predict_forward_tape(params, &g)?;
        Ok(Pass { embed, pred, dg: vec![0.0; g.len()], dlogit: 0.0 })
    }

    fn g(&self) -> &[f64] {
        &self.embed.activations[self.embed.activations.len() - 1]
    }

    fn prob(&self) -> f64 {
        self.pred.prob
    }

    /// d prob / d logit.
    fn slope(&self) -> f64 {
        let p = sigmoid(self.pred.logit);
        p * (1.0 - p)
    }

    fn backprop(self, params: &ModelParams, grad: &mut ModelParams) {
        let top = &self.pred.activations[self.pred.activations.len() - 1];
        for (gw, h) in grad.sigmoid_weight.iter_mut().zip(top) {
            *gw += self.dlogit * h;
        }
        let mut dh: Vec<f64> = params.sigmoid_weight.iter().map(|w| self.dlogit * w).collect();
        dh = relu_stack_backward(&params.pred, &mut grad.pred, &self.pred.activations, dh, true);
        for (d, extra) in dh.iter_mut().zip(&self.dg) {
            *d += extra;
        }
        relu_stack_backward(&params.embed, &mut grad.embed, &self.embed.activations, dh, false);
    }
}

/// Backpropagates `dout` through ReLU layers; returns the input gradient when
/// `want_input` is set.
fn relu_stack_backward(
    layers: &[DenseLayer],
    grads: &mut [DenseLayer],
    activations: &[Vec<f64>],
    mut dout: Vec<f64>,
    want_input: bool,
) -> Vec<f64> {
    for k in (0..layers.len()).rev() {
        let (layer, grad) = (&layers[k], &mut grads[k]);
        let input = &activations[k];
        let output = &activations[k + 1];
        let dpre: Vec<f64> = dout.iter().zip(output).map(|(d, o)| if *o > 0.0 { *d } else { 0.0 }).collect();
        let need_input = k > 0 || want_input;
        let mut din = if need_input { vec![0.0; layer.inputs] } else { Vec::new() };
        for (r, &dp) in dpre.iter().enumerate() {
            if dp == 0.0 {
                continue;
            }
            grad.biases[r] += dp;
            let row = r * layer.inputs..(r + 1) * layer.inputs;
            for (gw, x) in grad.weights[row.clone()].iter_mut().zip(input) {
                *gw += dp * x;
            }
            if need_input {
                for (di, w) in din.iter_mut().zip(&layer.weights[row]) {
                    *di += dp * w;
                }
            }
        }
        dout = din;
    }
    dout
}

/// Adds `-scale * log Pr(target | g)` and, with `grads`, its derivatives.
fn context_term(
    params: &ModelParams,
    g: &[f64],
    sample: &ContextSample,
    estimator: ContextEstimator,
    scale: f64,
    dg: &mut [f64],
    context: Option<&mut BTreeMap<usize, Vec<f64>>>,
) -> Result<f64> {
    let rows = params.context_rows();
    for &i in std::iter::once(&sample.target).chain(&sample.negatives) {
        if i >= rows {
            return Err(Error::Vocab { index: i, size: rows });
        }
    }
    if sample.negatives.contains(&sample.target) {
        return Err(Error::Data(format!("negative samples include the target {}", sample.target)));
    }
    let st = dot(g, params.context_row(sample.target)?);
    let sn: Vec<f64> = sample.negatives.iter().map(|&n| dot(g, params.context_row(n).expect("checked"))).collect();
    // d(-log p)/d score for the target and each negative
    let (value, dt, dn): (f64, f64, Vec<f64>) = match estimator {
        ContextEstimator::NegativeSampling => {
            let lp = log_sigmoid(st) + sn.iter().map(|s| log_sigmoid(-s)).sum::<f64>();
            (-lp, sigmoid(st) - 1.0, sn.iter().map(|s| sigmoid(*s)).collect())
        }
        ContextEstimator::SampledSoftmax => {
            let max = sn.iter().copied().fold(st, f64::max);
            let et = (st - max).exp();
            let en: Vec<f64> = sn.iter().map(|s| (s - max).exp()).collect();
            let z = et + en.iter().sum::<f64>();
            let lp = st - max - z.ln();
            (-lp, et / z - 1.0, en.iter().map(|e| e / z).collect())
        }
    };
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite context loss".into()));
    }
    if let Some(context) = context {
        let m = g.len();
        let mut touch = |row: usize, coef: f64, dg: &mut [f64]| {
            let c = coef * scale;
            let w = params.context_row(row).expect("checked");
            for (d, x) in dg.iter_mut().zip(w) {
                *d += c * x;
            }
            let gr = context.entry(row).or_insert_with(|| vec![0.0; m]);
            for (d, x) in gr.iter_mut().zip(g) {
                *d += c * x;
            }
        };
        touch(sample.target, dt, dg);
        for (&n, &c) in sample.negatives.iter().zip(&dn) {
            touch(n, c, dg);
        }
    }
    Ok(value)
}

fn process_chunk(
    params: &ModelParams,
    items: &[BatchItem],
    weights: &ObjectiveWeights,
    estimator: ContextEstimator,
    observed_total: usize,
    want_grad: bool,
) -> Result<Partial> {
    let mut out = Partial {
        net: want_grad.then(|| {
            let mut net = params.zeros_like();
            net.context_table = Vec::new();
            net
        }),
        context: BTreeMap::new(),
        supervised: 0.0,
        unsupervised: 0.0,
        temporal: 0.0,
    };
    for item in items {
        let mut main = Pass::run(params, &item.z)?;
        let mut others: Vec<Pass> = Vec::new();

        if item.observed {
            let y = if item.churned { 1.0 } else { 0.0 };
            let r = y - main.prob();
            let l = observed_total as f64;
            out.supervised += r * r / l;
            main.dlogit += weights.supervised * (-2.0 * r / l) * main.slope();

            let g = main.g().to_vec();
            for sample in &item.contexts {
                let ctx = if want_grad { Some(&mut out.context) } else { None };
                out.unsupervised += context_term(params, &g, sample, estimator, weights.unsupervised, &mut main.dg, ctx)?;
            }
        }

        if let Some(partner) = &item.temporal {
            let mut next = Pass::run(params, &partner.z_next)?;
            let diff: Vec<f64> = next.g().iter().zip(main.g()).map(|(a, b)| a - b).collect();
            let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            out.temporal += norm;
            if norm > 0.0 {
                for ((dn, dm), d) in next.dg.iter_mut().zip(main.dg.iter_mut()).zip(&diff) {
                    let c = weights.temporal * d / norm;
                    *dn += c;
                    *dm -= c;
                }
            }
            let mut reference = if item.observed {
                None
            } else {
                let z = partner
                    .z_reference
                    .as_ref()
                    .ok_or_else(|| Error::Data("censored temporal pair has no last-observed reference".into()))?;
                Some(Pass::run(params, z)?)
            };
            let f_ref = reference.as_ref().map_or(main.prob(), |p| p.prob());
            let gap = f_ref - next.prob();
            if gap > 0.0 {
                out.temporal += gap;
                next.dlogit -= weights.temporal * next.slope();
                match reference.as_mut() {
                    Some(r) => r.dlogit += weights.temporal * r.slope(),
                    None => main.dlogit += weights.temporal * main.slope(),
                }
            }
            others.push(next);
            others.extend(reference);
        }

        if let Some(net) = out.net.as_mut() {
            main.backprop(params, net);
            for p in others {
                p.backprop(params, net);
            }
        }
    }
    Ok(out)
}

fn regularization(params: &ModelParams, lambdas: &[f64; 5]) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    lambdas[0] * params.embed.iter().map(|l| sq(&l.weights)).sum::<f64>()
        + lambdas[1] * params.embed.iter().map(|l| sq(&l.biases)).sum::<f64>()
        + lambdas[2] * params.pred.iter().map(|l| sq(&l.weights)).sum::<f64>()
        + lambdas[3] * params.pred.iter().map(|l| sq(&l.biases)).sum::<f64>()
        + lambdas[4] * sq(&params.sigmoid_weight)
}

fn evaluate(
    params: &ModelParams,
    batch: &Batch,
    weights: &ObjectiveWeights,
    estimator: ContextEstimator,
    want_grad: bool,
) -> Result<(ObjectiveValue, Option<ModelParams>)> {
    if batch.items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let observed = batch.observed_count();
    let partials = batch
        .items
        .par_chunks(CHUNK)
        .map(|chunk| process_chunk(params, chunk, weights, estimator, observed, want_grad))
        .collect::<Result<Vec<_>>>()?;

    let mut value = ObjectiveValue { regularization: regularization(params, &weights.lambdas), ..Default::default() };
    let mut grad = want_grad.then(|| params.zeros_like());
    let m = params.embedding_dim();
    for p in partials {
        value.supervised += p.supervised;
        value.unsupervised += p.unsupervised;
        value.temporal += p.temporal;
        if let (Some(grad), Some(net)) = (grad.as_mut(), p.net) {
            for (a, b) in grad.tensors_mut().into_iter().zip(net.tensors()) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            for (row, g) in p.context {
                for (x, y) in grad.context_table[row * m..(row + 1) * m].iter_mut().zip(&g) {
                    *x += y;
                }
            }
        }
    }
    value.total = weights.supervised * value.supervised
        + weights.unsupervised * value.unsupervised
        + weights.temporal * value.temporal
        + weights.regularization * value.regularization;
    if !value.total.is_finite() {
        return Err(Error::Numeric("non-finite objective".into()));
    }

    if let Some(grad) = grad.as_mut() {
        let r = 2.0 * weights.regularization;
        let lam = &weights.lambdas;
        for (g, p) in grad.embed.iter_mut().zip(&params.embed) {
            add_decay(&mut g.weights, &p.weights, r * lam[0]);
            add_decay(&mut g.biases, &p.biases, r * lam[1]);
        }
        for (g, p) in grad.pred.iter_mut().zip(&params.pred) {
            add_decay(&mut g.weights, &p.weights, r * lam[2]);
            add_decay(&mut g.biases, &p.biases, r * lam[3]);
        }
        add_decay(&mut grad.sigmoid_weight, &params.sigmoid_weight, r * lam[4]);
        if !grad.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
    }
    Ok((value, grad))
}

fn add_decay(grad: &mut [f64], param: &[f64], coef: f64) {
    if coef != 0.0 {
        for (g, p) in grad.iter_mut().zip(param) {
            *g += coef * p;
        }
    }
}

/// Objective value of a batch.
pub fn objective(params: &ModelParams, batch: &Batch, weights: &ObjectiveWeights, estimator: ContextEstimator) -> Result<ObjectiveValue> {
    evaluate(params, batch, weights, estimator, false).map(|(v, _)| v)
}

/// Objective value and its gradient with respect to every parameter.
///
/// Kinks (ReLU at 0, the hinge at 0, the norm at 0) take subgradient 0.
pub fn backward(
    params: &ModelParams,
    batch: &Batch,
    weights: &ObjectiveWeights,
    estimator: ContextEstimator,
) -> Result<(ObjectiveValue, ModelParams)> {
    evaluate(params, batch, weights, estimator, true).map(|(v, g)| (v, g.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::ModelConfig;

    fn params(seed: u64) -> ModelParams {
        let cfg = ModelConfig { embed_layers: vec![5, 4], pred_layers: vec![3], context_init_std: 0.5 };
        let mut p = ModelParams::init(&cfg, 6, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        // positive biases keep most ReLUs active so every weight gets a gradient
        for l in p.embed.iter_mut().chain(p.pred.iter_mut()) {
            l.biases.iter_mut().for_each(|b| *b = 0.3);
        }
        p
    }

    fn z(rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn batch(seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::new();
        for k in 0..6 {
            let observed = k % 3 != 2;
            items.push(BatchItem {
                z: z(&mut rng),
                churned: k % 2 == 0,
                observed,
                contexts: (0..2).map(|c| ContextSample { target: (k + c) % 10, negatives: vec![(k + c + 3) % 10, (k + c + 7) % 10] }).collect(),
                temporal: Some(TemporalPartner { z_next: z(&mut rng), z_reference: (!observed).then(|| z(&mut rng)) }),
            });
        }
        Batch { items }
    }

    fn all_weights() -> ObjectiveWeights {
        ObjectiveWeights { supervised: 1.0, unsupervised: 0.3, temporal: 0.7, regularization: 0.05, lambdas: [1.0, 0.5, 1.5, 0.8, 1.2] }
    }

    #[test]
    fn zero_weights_give_zero_gradient() {
        let p = params(1);
        let (_, g) = backward(&p, &batch(2), &ObjectiveWeights::zero(), ContextEstimator::SampledSoftmax).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn regularization_only_gradient_is_two_lambda_w() {
        let p = params(3);
        let w = ObjectiveWeights { regularization: 1.0, lambdas: [0.5, 0.25, 2.0, 3.0, 1.5], ..ObjectiveWeights::zero() };
        let (_, g) = backward(&p, &batch(4), &w, ContextEstimator::NegativeSampling).unwrap();
        for (gl, pl) in g.embed.iter().zip(&p.embed) {
            assert!(gl.weights.iter().zip(&pl.weights).all(|(a, b)| (a - 2.0 * 0.5 * b).abs() < 1e-15));
            assert!(gl.biases.iter().zip(&pl.biases).all(|(a, b)| (a - 2.0 * 0.25 * b).abs() < 1e-15));
        }
        for (gl, pl) in g.pred.iter().zip(&p.pred) {
            assert!(gl.weights.iter().zip(&pl.weights).all(|(a, b)| (a - 4.0 * b).abs() < 1e-15));
            assert!(gl.biases.iter().zip(&pl.biases).all(|(a, b)| (a - 6.0 * b).abs() < 1e-15));
        }
        assert!(g.sigmoid_weight.iter().zip(&p.sigmoid_weight).all(|(a, b)| (a - 3.0 * b).abs() < 1e-15));
        assert!(g.context_table.iter().all(|v| *v == 0.0));
    }

    /// Central differences over every parameter.
    fn max_rel_error(p: &ModelParams, b: &Batch, w: &ObjectiveWeights, est: ContextEstimator) -> f64 {
        let (_, analytic) = backward(p, b, w, est).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = p.clone();
        let flat_len: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
        for (ti, &len) in flat_len.iter().enumerate() {
            for k in 0..len {
                let orig = probe.tensors()[ti][k];
                probe.tensors_mut()[ti][k] = orig + h;
                let up = objective(&probe, b, w, est).unwrap().total;
                probe.tensors_mut()[ti][k] = orig - h;
                let down = objective(&probe, b, w, est).unwrap().total;
                probe.tensors_mut()[ti][k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.tensors()[ti][k];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..4 {
            for est in [ContextEstimator::NegativeSampling, ContextEstimator::SampledSoftmax] {
                let err = max_rel_error(&params(seed), &batch(seed + 100), &all_weights(), est);
                assert!(err < 1e-4, "seed {seed} {est:?}: {err}");
            }
        }
    }

    #[test]
    fn censored_item_without_reference_is_a_data_error() {
        let mut b = batch(5);
        b.items[2].temporal.as_mut().unwrap().z_reference = None;
        assert!(matches!(objective(&params(1), &b, &all_weights(), ContextEstimator::SampledSoftmax), Err(Error::Data(_))));
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(matches!(
            objective(&params(1), &Batch::default(), &all_weights(), ContextEstimator::SampledSoftmax),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn result_does_not_depend_on_thread_count() {
        let p = params(9);
        let mut b = batch(10);
        for _ in 0..4 {
            let extra = b.items.clone();
            b.items.extend(extra);
        }
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let (v1, g1) = one.install(|| backward(&p, &b, &all_weights(), ContextEstimator::SampledSoftmax)).unwrap();
        let (v4, g4) = four.install(|| backward(&p, &b, &all_weights(), ContextEstimator::SampledSoftmax)).unwrap();
        assert_eq!(v1.total.to_bits(), v4.total.to_bits());
        assert_eq!(g1, g4);
    }
}
