//! The four objective components, each as a standalone function of its
//! inputs, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{context_log_prob, ContextEstimator, ContextSample, ModelParams, ObjectiveWeights};

/// Multipliers of the unsupervised, temporal and regularization terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Embedding weights, embedding biases, prediction weights, prediction biases, sigmoid weight.
    pub lambdas: [f64; 5],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.02, beta: 0.01, gamma: 1e-5, lambdas: [1.0; 5] }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma].into_iter().chain(self.lambdas);
        if all.into_iter().any(|w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

impl From<LossWeights> for ObjectiveWeights {
    fn from(w: LossWeights) -> Self {
        ObjectiveWeights { supervised: 1.0, unsupervised: w.alpha, temporal: w.beta, regularization: w.gamma, lambdas: w.lambdas }
    }
}

/// One summand of the supervised loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisedExample {
    pub prediction: f64,
    /// The edge still exists on the next day.
    pub persists: bool,
    pub observed: bool,
}

/// Mean squared error between the churn indicator and the prediction over
/// observed examples; 0 when every example is censored.
pub fn supervised_loss(examples: &[SupervisedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let observed: Vec<_> = examples.iter().filter(|e| e.observed).collect();
    if observed.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = observed
        .iter()
        .map(|e| {
            let churn = if e.persists { 0.0 } else { 1.0 };
            (churn - e.prediction).powi(2)
        })
        .sum();
    Ok(sum / observed.len() as f64)
}

/// An edge embedding with its sampled contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct UnsupervisedExample {
    pub embedding: Vec<f64>,
    pub contexts: Vec<ContextSample>,
}

/// Negative log-likelihood of every context.
pub fn unsupervised_loss(params: &ModelParams, examples: &[UnsupervisedExample], estimator: ContextEstimator) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for e in examples {
        for c in &e.contexts {
            total -= context_log_prob(params, &e.embedding, c.target, &c.negatives, estimator)?;
        }
    }
    Ok(total)
}

/// One edge on two consecutive days.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalPair {
    pub embedding: Vec<f64>,
    pub next_embedding: Vec<f64>,
    pub prediction: f64,
    pub next_prediction: f64,
    pub observed: bool,
    /// Prediction at the last observed day; required when `observed` is false.
    pub reference_prediction: Option<f64>,
}

/// Embedding drift plus the hinge on any drop in churn probability.
pub fn temporal_loss(pairs: &[TemporalPair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        if p.embedding.len() != p.next_embedding.len() {
            return Err(Error::Schema("temporal pair embeddings differ in length".into()));
        }
        let drift = p.embedding.iter().zip(&p.next_embedding).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        let reference = if p.observed {
            p.prediction
        } else {
            p.reference_prediction
                .ok_or_else(|| Error::Data("censored temporal pair has no last-observed reference".into()))?
        };
        total += drift + (reference - p.next_prediction).max(0.0);
    }
    Ok(total)
}

/// `Σ λ_k ‖P_k‖²` over the five parameter groups.
pub fn regularization_loss(params: &ModelParams, lambdas: &[f64; 5]) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    lambdas[0] * params.embed.iter().map(|l| sq(&l.weights)).sum::<f64>()
        + lambdas[1] * params.embed.iter().map(|l| sq(&l.biases)).sum::<f64>()
        + lambdas[2] * params.pred.iter().map(|l| sq(&l.weights)).sum::<f64>()
        + lambdas[3] * params.pred.iter().map(|l| sq(&l.biases)).sum::<f64>()
        + lambdas[4] * sq(&params.sigmoid_weight)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub supervised: f64,
    pub unsupervised: f64,
    pub temporal: f64,
    pub regularization: f64,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    c.supervised + w.alpha * c.unsupervised + w.beta * c.temporal + w.gamma * c.regularization
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::{embed_forward, DenseLayer, ModelConfig};

    fn ex(prediction: f64, persists: bool, observed: bool) -> SupervisedExample {
        SupervisedExample { prediction, persists, observed }
    }

    #[test]
    fn supervised_examples() {
        assert_eq!(supervised_loss(&[ex(0.4, true, false), ex(0.9, false, false)]).unwrap(), 0.0);
        assert!((supervised_loss(&[ex(0.3, true, true)]).unwrap() - 0.09).abs() < 1e-15);
        assert_eq!(supervised_loss(&[ex(0.0, true, true), ex(1.0, false, true)]).unwrap(), 0.0);
        assert!(matches!(supervised_loss(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn supervised_ignores_censored_predictions() {
        let a = supervised_loss(&[ex(0.3, true, true), ex(0.1, true, false)]).unwrap();
        let b = supervised_loss(&[ex(0.3, true, true), ex(0.95, false, false)]).unwrap();
        assert_eq!(a, b);
    }

    fn params(vocab: usize, seed: u64) -> ModelParams {
        let cfg = ModelConfig { embed_layers: vec![4], pred_layers: vec![2], context_init_std: 0.7 };
        ModelParams::init(&cfg, 3, vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn unsupervised_examples() {
        let p = params(6, 1);
        let empty = vec![UnsupervisedExample { embedding: vec![0.5; 4], contexts: vec![] }];
        assert_eq!(unsupervised_loss(&p, &empty, ContextEstimator::NegativeSampling).unwrap(), 0.0);
        let zero = vec![UnsupervisedExample {
            embedding: vec![0.0; 4],
            contexts: vec![ContextSample { target: 0, negatives: vec![1, 2, 3, 4, 5] }],
        }];
        let v = unsupervised_loss(&p, &zero, ContextEstimator::NegativeSampling).unwrap();
        assert!((v - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(unsupervised_loss(&p, &[], ContextEstimator::NegativeSampling), Err(Error::EmptyBatch)));
    }

    #[test]
    fn unsupervised_matches_exact_softmax_with_all_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for vocab in [2, 5, 12, 20] {
            let p = params(vocab, vocab as u64);
            let examples: Vec<_> = (0..3)
                .map(|_| UnsupervisedExample {
                    embedding: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    contexts: (0..3)
                        .map(|_| {
                            let t = rng.random_range(0..vocab);
                            ContextSample { target: t, negatives: (0..vocab).filter(|&r| r != t).collect() }
                        })
                        .collect(),
                })
                .collect();
            let mut exact = 0.0;
            for e in &examples {
                let scores: Vec<f64> = (0..vocab)
                    .map(|r| e.embedding.iter().zip(p.context_row(r).unwrap()).map(|(a, b)| a * b).sum())
                    .collect();
                let log_z = scores.iter().map(|s| s.exp()).sum::<f64>().ln();
                for c in &e.contexts {
                    exact += log_z - scores[c.target];
                }
            }
            let est = unsupervised_loss(&p, &examples, ContextEstimator::SampledSoftmax).unwrap();
            assert!((est - exact).abs() < 1e-9, "vocab {vocab}: {est} vs {exact}");
        }
    }

    fn pair(g0: Vec<f64>, g1: Vec<f64>, f0: f64, f1: f64, observed: bool, reference: Option<f64>) -> TemporalPair {
        TemporalPair { embedding: g0, next_embedding: g1, prediction: f0, next_prediction: f1, observed, reference_prediction: reference }
    }

    #[test]
    fn temporal_examples() {
        assert_eq!(temporal_loss(&[pair(vec![0.2, 0.4], vec![0.2, 0.4], 0.3, 0.6, true, None)]).unwrap(), 0.0);
        assert_eq!(temporal_loss(&[pair(vec![0.0, 0.0], vec![3.0, 4.0], 0.2, 0.2, true, None)]).unwrap(), 5.0);
        let v = temporal_loss(&[pair(vec![1.0], vec![1.0], 0.7, 0.4, true, None)]).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn censored_pair_uses_reference() {
        // the day-i prediction is ignored once the label is censored
        let v = temporal_loss(&[pair(vec![1.0], vec![1.0], 0.1, 0.4, false, Some(0.65))]).unwrap();
        assert_eq!(v, 0.65 - 0.4);
        assert!(matches!(temporal_loss(&[pair(vec![1.0], vec![1.0], 0.1, 0.4, false, None)]), Err(Error::Data(_))));
    }

    #[test]
    fn regularization_examples() {
        let mut p = params(2, 3);
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        assert_eq!(regularization_loss(&p, &[1.0; 5]), 0.0);

        let single = ModelParams {
            embed: vec![DenseLayer { inputs: 2, weights: vec![1.0, 1.0], biases: vec![0.0] }],
            pred: vec![DenseLayer::zeros(1, 1)],
            sigmoid_weight: vec![0.0],
            context_table: vec![],
        };
        assert_eq!(regularization_loss(&single, &[1.0, 0.0, 0.0, 0.0, 0.0]), 2.0);

        let p = params(2, 4);
        let mut doubled = p.clone();
        doubled.scale(2.0);
        let l = [0.3, 0.7, 1.1, 0.2, 0.9];
        assert!((regularization_loss(&doubled, &l) - 4.0 * regularization_loss(&p, &l)).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.beta, w.gamma), (0.02, 0.01, 1e-5));
        assert_eq!(total_loss(&LossComponents::default(), &w), 0.0);
        let ones = LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0, lambdas: [1.0; 5] };
        let c = LossComponents { supervised: 1.0, unsupervised: 2.0, temporal: 3.0, regularization: 4.0 };
        assert_eq!(total_loss(&c, &ones), 10.0);
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { alpha: -1.0, ..Default::default() }.validate().is_err());
    }

    /// The batched objective agrees with the component functions.
    #[test]
    fn batch_objective_agrees_with_components() {
        use crate::model::{objective, predict_forward, Batch, BatchItem, TemporalPartner};
        let p = params(8, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut z = || -> Vec<f64> { (0..3).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let items: Vec<BatchItem> = (0..5)
            .map(|k| BatchItem {
                z: z(),
                churned: k % 2 == 1,
                observed: k != 3,
                contexts: vec![ContextSample { target: k, negatives: vec![(k + 1) % 8, (k + 4) % 8] }],
                temporal: Some(TemporalPartner { z_next: z(), z_reference: (k == 3).then(&mut z) }),
            })
            .collect();
        let w = LossWeights { alpha: 0.5, beta: 0.25, gamma: 0.1, lambdas: [1.0, 2.0, 0.5, 0.3, 0.7] };
        let got = objective(&p, &Batch { items: items.clone() }, &w.into(), ContextEstimator::NegativeSampling).unwrap();

        let emb = |z: &[f64]| embed_forward(&p, z).unwrap().0;
        let f = |z: &[f64]| predict_forward(&p, &emb(z)).unwrap();
        let sup: Vec<_> = items.iter().map(|i| ex(f(&i.z), !i.churned, i.observed)).collect();
        let unsup: Vec<_> = items
            .iter()
            .filter(|i| i.observed)
            .map(|i| UnsupervisedExample { embedding: emb(&i.z), contexts: i.contexts.clone() })
            .collect();
        let temporal: Vec<_> = items
            .iter()
            .map(|i| {
                let t = i.temporal.as_ref().unwrap();
                pair(emb(&i.z), emb(&t.z_next), f(&i.z), f(&t.z_next), i.observed, t.z_reference.as_deref().map(f))
            })
            .collect();
        let c = LossComponents {
            supervised: supervised_loss(&sup).unwrap(),
            unsupervised: unsupervised_loss(&p, &unsup, ContextEstimator::NegativeSampling).unwrap(),
            temporal: temporal_loss(&temporal).unwrap(),
            regularization: regularization_loss(&p, &w.lambdas),
        };
        assert!((got.total - total_loss(&c, &w)).abs() < 1e-12);
        assert!((got.supervised - c.supervised).abs() < 1e-12);
        assert!((got.unsupervised - c.unsupervised).abs() < 1e-12);
        assert!((got.temporal - c.temporal).abs() < 1e-12);
        assert!((got.regularization - c.regularization).abs() < 1e-12);
    }
}
