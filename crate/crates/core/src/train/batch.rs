//! Training examples and negative sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{EdgeKey, LabelValue, TemporalBipartiteGraph};
use crate::model::{BatchItem, ContextSample, EdgeVocabulary, TemporalPartner};
use crate::walk::{build_augmented, WalkConfig};

/// One edge on one training day.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeExample {
    pub edge: EdgeKey,
    pub day: i64,
    pub z: Vec<f64>,
    pub label: LabelValue,
    /// Vocabulary rows of the sampled context edges; empty when censored.
    pub contexts: Vec<usize>,
    pub temporal: Option<TemporalPartner>,
}

impl EdgeExample {
    pub fn observed(&self) -> bool {
        self.label != LabelValue::Unknown
    }

    pub fn churned(&self) -> bool {
        self.label == LabelValue::Churn
    }
}

/// Every training example with the context vocabulary they index.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub examples: Vec<EdgeExample>,
    pub vocabulary: EdgeVocabulary,
    /// How often each vocabulary row occurs as a context.
    pub context_counts: Vec<u64>,
    /// Last day whose plays the training labels may see.
    pub horizon: i64,
}

/// Builds the examples of `days`, labelling with plays up to `horizon` only.
///
/// Example `k` (in day, then edge order) samples its walks from an RNG
/// seeded with `walk.rng_seed ^ k`.
pub fn build_training_set(g: &TemporalBipartiteGraph, days: &[i64], horizon: i64, walk: &WalkConfig) -> Result<TrainingSet> {
    walk.validate()?;
    let mut examples = Vec::new();
    let mut raw_contexts: Vec<Vec<EdgeKey>> = Vec::new();
    for &i in days {
        if i >= horizon {
            return Err(Error::Data(format!("training day {i} is not before the horizon {horizon}")));
        }
        let snap = g.snapshot(i)?;
        let ag = build_augmented(snap, walk)?;
        let offset = examples.len() as u64;
        let edges: Vec<EdgeKey> = snap.edges().iter().copied().collect();
        let built = edges
            .par_iter()
            .enumerate()
            .map(|(k, &e)| -> Result<Option<(EdgeExample, Vec<EdgeKey>)>> {
                let label = g.edge_label_within(e.player, e.game, i, horizon)?;
                let z = snap.edge_features(g.schema(), e.player, e.game)?;
                let contexts = if label.observed {
                    let mut rng = ChaCha8Rng::seed_from_u64(walk.rng_seed ^ (offset + k as u64));
                    ag.sample_contexts(e, walk, &mut rng)?
                } else {
                    Vec::new()
                };
                let temporal = if g.has_edge(e, i + 1) && i < horizon {
                    let z_next = g.edge_features(e.player, e.game, i + 1)?;
                    match (label.observed, label.last_observed) {
                        (true, _) => Some(TemporalPartner { z_next, z_reference: None }),
                        (false, Some(t)) => Some(TemporalPartner { z_next, z_reference: Some(g.edge_features(e.player, e.game, t)?) }),
                        (false, None) => None,
                    }
                } else {
                    None
                };
                if !label.observed && temporal.is_none() {
                    return Ok(None);
                }
                let ex = EdgeExample { edge: e, day: i, z, label: label.value, contexts: Vec::new(), temporal };
                Ok(Some((ex, contexts)))
            })
            .collect::<Result<Vec<_>>>()?;
        for (ex, ctx) in built.into_iter().flatten() {
            examples.push(ex);
            raw_contexts.push(ctx);
        }
    }
    let mut vocabulary = EdgeVocabulary::new();
    let mut context_counts: Vec<u64> = Vec::new();
    for (ex, ctx) in examples.iter_mut().zip(raw_contexts) {
        for c in ctx {
            let row = vocabulary.insert(c);
            if row == context_counts.len() {
                context_counts.push(0);
            }
            context_counts[row] += 1;
            ex.contexts.push(row);
        }
    }
    Ok(TrainingSet { examples, vocabulary, context_counts, horizon })
}

/// Draws negatives from the context frequencies raised to the 0.75 power.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    dist: Option<WeightedIndex<f64>>,
    rows: usize,
}

impl NegativeSampler {
    pub fn new(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        NegativeSampler { dist: WeightedIndex::new(&weights).ok(), rows: counts.len() }
    }

    /// Up to `k` rows other than `target`; fewer only when no other row exists.
    pub fn sample<R: Rng + ?Sized>(&self, target: usize, k: usize, rng: &mut R) -> Vec<usize> {
        let Some(dist) = &self.dist else { return Vec::new() };
        if self.rows < 2 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(k);
        let mut attempts = 0;
        while out.len() < k && attempts < 64 * k {
            attempts += 1;
            let r = dist.sample(rng);
            if r != target {
                out.push(r);
            }
        }
        // a target holding nearly all the mass: fall back to uniform draws
        while out.len() < k {
            let r = rng.random_range(0..self.rows - 1);
            out.push(if r >= target { r + 1 } else { r });
        }
        out
    }
}

/// Turns examples into a model batch with fresh negatives.
pub fn assemble<R: Rng + ?Sized>(examples: &[&EdgeExample], sampler: &NegativeSampler, negatives: usize, rng: &mut R) -> Vec<BatchItem> {
    examples
        .iter()
        .map(|ex| BatchItem {
            z: ex.z.clone(),
            churned: ex.churned(),
            observed: ex.observed(),
            contexts: ex
                .contexts
                .iter()
                .map(|&t| ContextSample { target: t, negatives: sampler.sample(t, negatives, rng) })
                .collect(),
            temporal: ex.temporal.clone(),
        })
        .collect()
}
