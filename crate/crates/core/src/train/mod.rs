//! Chronological splitting, the training loop and inference.

mod adam;
mod batch;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batch::{assemble, build_training_set, EdgeExample, NegativeSampler, TrainingSet};

use crate::error::{Error, Result};
use crate::graph::{EdgeKey, LabelValue, TemporalBipartiteGraph};
use crate::loss::LossWeights;
use crate::metrics::auc;
use crate::model::{backward, objective, predict_edge, Batch, Checkpoint, ContextEstimator, ModelConfig, ModelParams, ObjectiveWeights};
use crate::walk::WalkConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every step minimises the full objective.
    #[default]
    CoTrain,
    /// Even epochs fit the context head and the embedding trunk, odd epochs
    /// fit the churn head with the temporal terms.
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: TrainMode,
    pub adam: AdamConfig,
    pub loss_weights: LossWeights,
    pub walk: WalkConfig,
    pub model: ModelConfig,
    /// Fraction of label days used for training.
    pub split_fraction: f64,
    /// Negative samples per context.
    pub negatives: usize,
    pub estimator: ContextEstimator,
    /// Divide the context and temporal sums by the batch size, putting them
    /// on the same per-example scale as the supervised mean.
    pub per_example_means: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.017,
            epochs: 7,
            batch_size: 256,
            mode: TrainMode::CoTrain,
            adam: AdamConfig::default(),
            loss_weights: LossWeights::default(),
            walk: WalkConfig::default(),
            model: ModelConfig::default(),
            split_fraction: 2.0 / 3.0,
            negatives: 5,
            estimator: ContextEstimator::default(),
            per_example_means: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config("train.initial_lr must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config("train.split_fraction must lie in (0, 1)".into()));
        }
        self.adam.validate()?;
        self.loss_weights.validate()?;
        self.walk.validate()?;
        self.model.validate()
    }

    fn epoch_weights(&self, epoch: usize, batch_len: usize) -> ObjectiveWeights {
        let mut w: ObjectiveWeights = self.loss_weights.into();
        if self.per_example_means {
            w.unsupervised /= batch_len as f64;
            w.temporal /= batch_len as f64;
        }
        if self.mode == TrainMode::Alternating {
            if epoch % 2 == 0 {
                w.supervised = 0.0;
                w.temporal = 0.0;
                w.lambdas = [w.lambdas[0], w.lambdas[1], 0.0, 0.0, 0.0];
            } else {
                w.unsupervised = 0.0;
            }
        }
        w
    }
}

/// Label days (every day but the last) split into a training prefix and a
/// test suffix.
pub fn chronological_split(g: &TemporalBipartiteGraph, fraction: f64) -> Result<(Vec<i64>, Vec<i64>)> {
    let mut days: Vec<i64> = (g.first_day()..g.last_day()).collect();
    if days.len() < 2 {
        return Err(Error::Data(format!("need at least two label days, found {}", days.len())));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config("split fraction must lie in (0, 1)".into()));
    }
    let n = days.len();
    // the tolerance keeps exact fractions such as 2/3 of 9 from rounding up
    let k = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let test = days.split_off(k);
    Ok((days, test))
}

/// `η₀ / (1 + k/2)` after `k` completed epochs.
pub fn decayed_lr(initial: f64, k: usize) -> f64 {
    initial / (1.0 + k as f64 / 2.0)
}

/// Churn probability of every edge of day `t`.
pub fn predict(params: &ModelParams, g: &TemporalBipartiteGraph, t: i64) -> Result<BTreeMap<EdgeKey, f64>> {
    let snap = g.snapshot(t)?;
    let edges: Vec<EdgeKey> = snap.edges().iter().copied().collect();
    let probs = edges
        .par_iter()
        .map(|e| {
            let z = snap
                .edge_features(g.schema(), e.player, e.game)
                .map_err(|err| Error::Data(format!("features of edge ({}, {}) on day {t}: {err}", e.player, e.game)))?;
            predict_edge(params, &z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(edges.into_iter().zip(probs).collect())
}

/// Observed `(churn probability, churned)` pairs of the given days, labelled
/// with every observed day.
pub fn labelled_predictions(params: &ModelParams, g: &TemporalBipartiteGraph, days: &[i64]) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::new();
    for &t in days {
        let probs = predict(params, g, t)?;
        for (e, p) in probs {
            match g.edge_label(e.player, e.game, t)?.value {
                LabelValue::Stay => out.push((p, false)),
                LabelValue::Churn => out.push((p, true)),
                LabelValue::Unknown => {}
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_auc: Option<f64>,
    pub test_auc: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochMetrics>,
    /// Full objective over the training set before the first update.
    pub initial_loss: f64,
    pub train_days: Vec<i64>,
    pub test_days: Vec<i64>,
    /// Set when a numeric failure stopped training; the checkpoint then holds
    /// the last parameters that were still finite.
    pub failure: Option<Error>,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NEGATIVE_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

/// Trains on the chronological prefix and reports per-epoch metrics.
///
/// Runs on the current rayon pool; results are identical for any pool size.
pub fn train(g: &TemporalBipartiteGraph, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let (train_days, test_days) = chronological_split(g, cfg.split_fraction)?;
    let horizon = train_days[train_days.len() - 1] + 1;
    let set = build_training_set(g, &train_days, horizon, &cfg.walk)?;
    if set.examples.is_empty() {
        return Err(Error::Data("no training examples in the training days".into()));
    }
    let sampler = NegativeSampler::new(&set.context_counts);
    let mut params = ModelParams::init(&cfg.model, g.schema().edge_dim(), set.vocabulary.len(), &mut seeded(cfg.seed, INIT_STREAM))?;
    let mut adam = AdamState::new(&params);

    // one fixed batch of every example measures the training objective
    let all: Vec<&EdgeExample> = set.examples.iter().collect();
    let eval_batch = Batch { items: assemble(&all, &sampler, cfg.negatives, &mut seeded(cfg.seed, EVAL_STREAM)) };
    let eval_weights = {
        let probe = TrainConfig { mode: TrainMode::CoTrain, ..cfg.clone() };
        probe.epoch_weights(0, eval_batch.items.len())
    };
    let initial_loss = objective(&params, &eval_batch, &eval_weights, cfg.estimator)?.total;

    let train_scored = |params: &ModelParams| -> Result<Vec<(f64, bool)>> {
        set.examples
            .par_iter()
            .filter(|e| e.observed())
            .map(|e| predict_edge(params, &e.z).map(|p| (p, e.churned())))
            .collect()
    };

    let mut order: Vec<usize> = (0..set.examples.len()).collect();
    let mut shuffle_rng = seeded(cfg.seed, SHUFFLE_STREAM);
    let mut negative_rng = seeded(cfg.seed, NEGATIVE_STREAM);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut failure = None;
    let mut completed = 0;
    'epochs: for k in 0..cfg.epochs {
        let lr = decayed_lr(cfg.initial_lr, k);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let picked: Vec<&EdgeExample> = chunk.iter().map(|&i| &set.examples[i]).collect();
            let batch = Batch { items: assemble(&picked, &sampler, cfg.negatives, &mut negative_rng) };
            let weights = cfg.epoch_weights(k, batch.items.len());
            let step = backward(&params, &batch, &weights, cfg.estimator).and_then(|(_, grad)| {
                let mut next = params.clone();
                adam_step(&mut next, &grad, &mut adam, lr, &cfg.adam)?;
                if next.is_finite() {
                    Ok(next)
                } else {
                    Err(Error::Numeric("parameters became non-finite".into()))
                }
            });
            match step {
                Ok(next) => params = next,
                Err(e @ Error::Numeric(_)) => {
                    failure = Some(e);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        completed = k + 1;
        let train_loss = objective(&params, &eval_batch, &eval_weights, cfg.estimator)?.total;
        let train_auc = auc(&train_scored(&params)?).ok();
        let test_auc = auc(&labelled_predictions(&params, g, &test_days)?).ok();
        log.push(EpochMetrics { epoch: completed, lr, train_loss, train_auc, test_auc });
    }

    let checkpoint = Checkpoint::new(cfg.seed, cfg.model.clone(), completed, params, &set.vocabulary);
    Ok(TrainOutput { checkpoint, log, initial_loss, train_days, test_days, failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FeatureSchema, Snapshot};
    use crate::synth::{generate, SynthConfig};

    fn days_graph(n: i64) -> TemporalBipartiteGraph {
        let schema = FeatureSchema::uniform(1, 1);
        let snaps = (0..n)
            .map(|t| Snapshot::new(t, [(0, vec![1.0])].into(), [(0, vec![1.0])].into(), Default::default(), &schema).unwrap())
            .collect();
        TemporalBipartiteGraph::new(schema, 1, snaps).unwrap()
    }

    #[test]
    fn split_examples() {
        // ten days give nine label days
        let (tr, te) = chronological_split(&days_graph(10), 2.0 / 3.0).unwrap();
        assert_eq!((tr, te), ((0..6).collect::<Vec<_>>(), (6..9).collect::<Vec<_>>()));
        let (tr, te) = chronological_split(&days_graph(3), 0.5).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        let (tr, te) = chronological_split(&days_graph(11), 0.5).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 5));
        assert!(tr.iter().max() < te.iter().min());
        assert!(matches!(chronological_split(&days_graph(2), 0.5), Err(Error::Data(_))));
    }

    #[test]
    fn lr_decay() {
        assert_eq!(decayed_lr(0.017, 0), 0.017);
        assert!((decayed_lr(0.017, 2) - 0.0085).abs() < 1e-18);
        assert!((0..20).all(|k| decayed_lr(0.3, k + 1) < decayed_lr(0.3, k)));
    }

    fn tiny() -> (TemporalBipartiteGraph, TrainConfig) {
        let data = generate(&SynthConfig { num_players: 30, num_games: 5, num_days: 10, ..SynthConfig::default() }).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 32,
            model: ModelConfig { embed_layers: vec![8, 6], pred_layers: vec![6, 4], context_init_std: 0.01 },
            ..TrainConfig::default()
        };
        (data.graph, cfg)
    }

    #[test]
    fn zero_lr_and_weights_keep_initialisation() {
        let (g, mut cfg) = tiny();
        cfg.initial_lr = 0.0;
        cfg.loss_weights = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, lambdas: [0.0; 5] };
        let out = train(&g, &cfg).unwrap();
        let zero = TrainConfig { epochs: 0, ..cfg.clone() };
        let init = train(&g, &zero).unwrap();
        assert_eq!(out.checkpoint.params, init.checkpoint.params);
        assert_eq!(init.checkpoint.epochs, 0);
        assert!(init.log.is_empty());
    }

    #[test]
    fn training_is_reproducible_across_thread_counts() {
        let (g, cfg) = tiny();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| train(&g, &cfg)).unwrap();
        let b = three.install(|| train(&g, &cfg)).unwrap();
        assert_eq!(a.checkpoint.to_json(), b.checkpoint.to_json());
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 2);
        assert_eq!(a.log[1].lr, decayed_lr(cfg.initial_lr, 1));
    }

    #[test]
    fn alternating_weights_split_the_objective() {
        let cfg = TrainConfig { mode: TrainMode::Alternating, per_example_means: false, ..TrainConfig::default() };
        let even = cfg.epoch_weights(0, 10);
        assert_eq!((even.supervised, even.temporal, even.unsupervised), (0.0, 0.0, 0.02));
        assert_eq!(even.lambdas, [1.0, 1.0, 0.0, 0.0, 0.0]);
        let odd = cfg.epoch_weights(1, 10);
        assert_eq!((odd.supervised, odd.temporal, odd.unsupervised), (1.0, 0.01, 0.0));
        assert_eq!(odd.regularization, 1e-5);
    }

    #[test]
    fn no_test_label_enters_training() {
        let (g, cfg) = tiny();
        let (train_days, test_days) = chronological_split(&g, cfg.split_fraction).unwrap();
        let horizon = train_days[train_days.len() - 1] + 1;
        let set = build_training_set(&g, &train_days, horizon, &cfg.walk).unwrap();
        assert!(set.examples.iter().all(|e| e.day < test_days[0]));
        // every label is what an observer at the horizon could see
        for e in &set.examples {
            assert_eq!(g.edge_label_within(e.edge.player, e.edge.game, e.day, horizon).unwrap().value, e.label);
        }
    }

    #[test]
    fn unseen_edges_still_get_probabilities() {
        let (g, cfg) = tiny();
        let out = train(&g, &TrainConfig { epochs: 1, ..cfg }).unwrap();
        let last = g.last_day();
        let probs = predict(&out.checkpoint.params, &g, last).unwrap();
        assert_eq!(probs.len(), g.snapshot(last).unwrap().edges().len());
        assert!(probs.values().all(|p| *p > 0.0 && *p < 1.0));
    }
}
