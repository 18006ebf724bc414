//! Attributed random walks over a snapshot.
//!
//! Besides the bipartite play edges, every node gets augmented links to its
//! most similar nodes of the same kind. A walker that just moved `prev -> cur`
//! picks its next node among the nodes of `prev`'s kind:
//!
//! * `prev` itself with weight `1 / p`;
//! * augmented neighbours `o` of `prev` with weight `sim(prev, o) / q`;
//! * nodes two base hops from `prev` with weight `sim(prev, o) * e(cur, o) / q`.
//!
//! Weights are normalised over the candidates. Each consecutive
//! (player, game) pair on a walk is a context edge of the starting edge.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cosine, EdgeKey, NodeId, NodeKind, Snapshot};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    /// Augmented links need similarity above `1 - epsilon`.
    pub epsilon: f64,
    /// Return constant.
    pub p: f64,
    /// In-out constant.
    pub q: f64,
    pub walk_length: usize,
    pub contexts_per_edge: usize,
    pub max_augmented_per_node: usize,
    pub rng_seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            epsilon: 1.0,
            p: 1.0,
            q: 0.05,
            walk_length: 4,
            contexts_per_edge: 4,
            max_augmented_per_node: 10,
            rng_seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("walk.epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.p > 0.0 && self.p.is_finite()) || !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::Config("walk.p and walk.q must be positive and finite".into()));
        }
        if self.walk_length == 0 || self.contexts_per_edge == 0 || self.max_augmented_per_node == 0 {
            return Err(Error::Config(
                "walk.walk_length, walk.contexts_per_edge and walk.max_augmented_per_node must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Cosine similarity of two node feature vectors; 0 if either norm is 0.
pub fn node_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Schema(format!("cannot compare vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(cosine(a, b))
}

/// A snapshot plus same-kind similarity links.
#[derive(Clone, Debug)]
pub struct AugmentedGraph<'a> {
    base: &'a Snapshot,
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
    augments: BTreeMap<NodeId, Vec<(NodeId, f64)>>,
}

fn top_similar(
    node: u32,
    x: &[f64],
    others: &BTreeMap<u32, Vec<f64>>,
    threshold: f64,
    cap: usize,
) -> Vec<(u32, f64)> {
    let mut found: Vec<(u32, f64)> = others
        .iter()
        .filter(|(id, _)| **id != node)
        .map(|(id, y)| (*id, cosine(x, y)))
        .filter(|(_, s)| *s > threshold)
        .collect();
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found.truncate(cap);
    found
}

/// Adds up to `max_augmented_per_node` same-kind links per node, keeping the
/// most similar nodes whose similarity exceeds `1 - epsilon`.
pub fn build_augmented<'a>(snapshot: &'a Snapshot, config: &WalkConfig) -> Result<AugmentedGraph<'a>> {
    config.validate()?;
    let threshold = 1.0 - config.epsilon;
    let cap = config.max_augmented_per_node;

    let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in snapshot.edges() {
        adjacency.entry(NodeId::player(e.player)).or_default().push(NodeId::game(e.game));
        adjacency.entry(NodeId::game(e.game)).or_default().push(NodeId::player(e.player));
    }
    for list in adjacency.values_mut() {
        list.sort_unstable();
    }

    let mut augments = BTreeMap::new();
    for (kind, table) in [(NodeKind::Player, snapshot.player_features()), (NodeKind::Game, snapshot.game_features())] {
        let rows: Vec<(u32, Vec<(u32, f64)>)> = table
            .par_iter()
            .map(|(id, x)| (*id, top_similar(*id, x, table, threshold, cap)))
            .collect();
        for (id, list) in rows {
            if !list.is_empty() {
                let list = list.into_iter().map(|(o, s)| (NodeId { kind, index: o }, s)).collect();
                augments.insert(NodeId { kind, index: id }, list);
            }
        }
    }
    Ok(AugmentedGraph { base: snapshot, adjacency, augments })
}

/// Normalised next-step probabilities, sorted by node.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDistribution {
    entries: Vec<(NodeId, f64)>,
}

impl TransitionDistribution {
    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.entries
    }

    /// Probability of moving to `node`; 0 for non-candidates.
    pub fn prob(&self, node: NodeId) -> f64 {
        self.entries
            .binary_search_by(|(n, _)| n.cmp(&node))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Inverse-CDF draw using one uniform variate from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (node, p) in &self.entries {
            acc += p;
            if r < acc {
                return *node;
            }
        }
        self.entries[self.entries.len() - 1].0
    }
}

impl<'a> AugmentedGraph<'a> {
    pub fn base(&self) -> &'a Snapshot {
        self.base
    }

    pub fn augments(&self, node: NodeId) -> &[(NodeId, f64)] {
        self.augments.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        self.adjacency.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    fn similarity(&self, a: NodeId, b: NodeId) -> f64 {
        match (self.base.features(a), self.base.features(b)) {
            (Some(x), Some(y)) if x.len() == y.len() => cosine(x, y),
            _ => 0.0,
        }
    }

    fn shares_neighbor(&self, a: NodeId, b: NodeId) -> bool {
        let (na, nb) = (self.neighbors(a), self.neighbors(b));
        let (mut i, mut j) = (0, 0);
        while i < na.len() && j < nb.len() {
            match na[i].cmp(&nb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Distribution of the node after `cur`, given the walk arrived from `prev`.
    pub fn transition_distribution(&self, prev: NodeId, cur: NodeId, config: &WalkConfig) -> Result<TransitionDistribution> {
        for node in [prev, cur] {
            if !self.base.contains(node) {
                return Err(Error::NotPresent(node.to_string(), self.base.t));
            }
        }
        if prev.kind == cur.kind {
            return Err(Error::Data(format!("walk step {prev} -> {cur} does not alternate node kinds")));
        }

        let mut weights: BTreeMap<NodeId, f64> = BTreeMap::new();
        weights.insert(prev, 1.0 / config.p);
        let one_hop = self.augments(prev);
        for (o, s) in one_hop {
            weights.insert(*o, s / config.q);
        }
        // Two-hop candidates only score when linked to `cur` (e(cur, o) = 1).
        for &o in self.neighbors(cur) {
            if o == prev || one_hop.iter().any(|(n, _)| *n == o) {
                continue;
            }
            if !self.shares_neighbor(prev, o) {
                continue;
            }
            let s = self.similarity(prev, o);
            if s > 0.0 {
                weights.insert(o, s / config.q);
            }
        }

        let total: f64 = weights.values().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DeadEnd(cur.to_string()));
        }
        let entries = weights.into_iter().filter(|(_, w)| *w > 0.0).map(|(n, w)| (n, w / total)).collect();
        Ok(TransitionDistribution { entries })
    }

    /// Context edges of `edge` from attributed walks that start by traversing
    /// it from the game to the player. Walks repeat until `contexts_per_edge`
    /// contexts are collected; an empty list means the first walk dead-ended.
    pub fn sample_contexts<R: Rng + ?Sized>(
        &self,
        edge: EdgeKey,
        config: &WalkConfig,
        rng: &mut R,
    ) -> Result<Vec<EdgeKey>> {
        if !self.base.has_edge(edge) {
            return Err(Error::NoEdge { player: edge.player, game: edge.game, day: self.base.t });
        }
        let mut contexts = Vec::with_capacity(config.contexts_per_edge);
        while contexts.len() < config.contexts_per_edge {
            let before = contexts.len();
            let mut prev = NodeId::game(edge.game);
            let mut cur = NodeId::player(edge.player);
            for _ in 0..config.walk_length {
                let next = match self.transition_distribution(prev, cur, config) {
                    Ok(dist) => dist.sample(rng),
                    Err(Error::DeadEnd(_)) => break,
                    Err(e) => return Err(e),
                };
                contexts.push(pair(cur, next));
                if contexts.len() == config.contexts_per_edge {
                    break;
                }
                prev = cur;
                cur = next;
            }
            if contexts.len() == before {
                break;
            }
        }
        Ok(contexts)
    }
}

fn pair(a: NodeId, b: NodeId) -> EdgeKey {
    match a.kind {
        NodeKind::Player => EdgeKey::new(a.index, b.index),
        NodeKind::Game => EdgeKey::new(b.index, a.index),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::FeatureSchema;

    fn snapshot(
        players: &[(u32, Vec<f64>)],
        games: &[(u32, Vec<f64>)],
        edges: &[(u32, u32)],
    ) -> Snapshot {
        let dim = players.first().or(games.first()).map(|x| x.1.len()).unwrap_or(1);
        let schema = FeatureSchema::uniform(1, dim);
        Snapshot::new(
            0,
            players.iter().cloned().collect(),
            games.iter().cloned().collect(),
            edges.iter().map(|&(u, v)| EdgeKey::new(u, v)).collect::<BTreeSet<_>>(),
            &schema,
        )
        .unwrap()
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(node_similarity(&[0.4, 2.0], &[0.4, 2.0]).unwrap(), 1.0);
        assert_eq!(node_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((node_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(node_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(node_similarity(&[1.0], &[1.0, 2.0]), Err(Error::Schema(_))));
    }

    #[test]
    fn tiny_epsilon_filters_everything() {
        let s = snapshot(
            &[(0, vec![1.0, 0.0]), (1, vec![1.0, 0.1])],
            &[(0, vec![0.0, 1.0]), (1, vec![0.2, 1.0])],
            &[(0, 0)],
        );
        let cfg = WalkConfig { epsilon: 1e-12, ..WalkConfig::default() };
        let ag = build_augmented(&s, &cfg).unwrap();
        for n in [NodeId::player(0), NodeId::player(1), NodeId::game(0), NodeId::game(1)] {
            assert!(ag.augments(n).is_empty());
        }
    }

    #[test]
    fn identical_games_link_each_other() {
        let s = snapshot(&[(0, vec![1.0, 0.0])], &[(3, vec![0.5, 0.5]), (7, vec![0.5, 0.5])], &[(0, 3)]);
        let cfg = WalkConfig { epsilon: 0.5, ..WalkConfig::default() };
        let ag = build_augmented(&s, &cfg).unwrap();
        assert_eq!(ag.augments(NodeId::game(3)), &[(NodeId::game(7), 1.0)]);
        assert_eq!(ag.augments(NodeId::game(7)), &[(NodeId::game(3), 1.0)]);
        assert!(ag.augments(NodeId::player(0)).is_empty());
    }

    #[test]
    fn cap_keeps_most_similar() {
        // Five games on the unit circle; no two angle gaps from one game tie.
        let angles = [0.0f64, 10.0, 25.0, 45.0, 85.0];
        let games: Vec<_> = angles
            .iter()
            .enumerate()
            .map(|(i, a)| (i as u32, vec![a.to_radians().cos(), a.to_radians().sin()]))
            .collect();
        let s = snapshot(&[(0, vec![1.0, 0.0])], &games, &[(0, 0)]);
        let cfg = WalkConfig { max_augmented_per_node: 2, ..WalkConfig::default() };
        let ag = build_augmented(&s, &cfg).unwrap();
        // Oracle: all pairwise angle gaps, sorted.
        for (i, a) in angles.iter().enumerate() {
            let mut expect: Vec<(u32, f64)> = angles
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, b)| (j as u32, (a - b).abs()))
                .collect();
            expect.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            let got: Vec<u32> = ag.augments(NodeId::game(i as u32)).iter().map(|(n, _)| n.index).collect();
            let want: Vec<u32> = expect.iter().take(2).map(|x| x.0).collect();
            assert_eq!(got, want, "game {i}");
            let sims: Vec<f64> = ag.augments(NodeId::game(i as u32)).iter().map(|x| x.1).collect();
            assert!(sims.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    /// Game 0 (prev) is linked to player 0 (cur); game 1 is an augmented
    /// neighbour of game 0 at similarity 0.9; game 2 is two base hops away
    /// through player 0 at similarity 0.5.
    fn kernel_fixture() -> Snapshot {
        let s09 = (1.0f64 - 0.81).sqrt();
        let s05 = (1.0f64 - 0.25).sqrt();
        snapshot(
            &[(0, vec![0.0, 0.0, 1.0]), (1, vec![0.0, 1.0, 1.0])],
            &[(0, vec![1.0, 0.0, 0.0]), (1, vec![0.9, s09, 0.0]), (2, vec![0.5, -s05, 0.0])],
            &[(0, 0), (0, 2), (1, 1)],
        )
    }

    #[test]
    fn kernel_weights_match_hand_normalisation() {
        let s = kernel_fixture();
        // epsilon = 0.2 keeps only the 0.9 link among games.
        let cfg = WalkConfig { epsilon: 0.2, p: 1.0, q: 0.05, ..WalkConfig::default() };
        let ag = build_augmented(&s, &cfg).unwrap();
        let d = ag.transition_distribution(NodeId::game(0), NodeId::player(0), &cfg).unwrap();
        // weights 1, 0.9 / 0.05 = 18, 0.5 / 0.05 = 10
        assert!((d.prob(NodeId::game(0)) - 1.0 / 29.0).abs() < 1e-12);
        assert!((d.prob(NodeId::game(1)) - 18.0 / 29.0).abs() < 1e-12);
        assert!((d.prob(NodeId::game(2)) - 10.0 / 29.0).abs() < 1e-12);
        assert_eq!(d.prob(NodeId::player(0)), 0.0);
        assert_eq!(d.prob(NodeId::player(1)), 0.0);
        let total: f64 = d.entries().iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lone_edge_only_returns() {
        let s = snapshot(&[(0, vec![1.0, 0.0])], &[(0, vec![0.0, 1.0])], &[(0, 0)]);
        let cfg = WalkConfig::default();
        let ag = build_augmented(&s, &cfg).unwrap();
        let d = ag.transition_distribution(NodeId::game(0), NodeId::player(0), &cfg).unwrap();
        assert_eq!(d.entries(), &[(NodeId::game(0), 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ctx = ag.sample_contexts(EdgeKey::new(0, 0), &cfg, &mut rng).unwrap();
        assert_eq!(ctx, vec![EdgeKey::new(0, 0); cfg.contexts_per_edge]);
    }

    #[test]
    fn same_kind_step_is_rejected() {
        let s = kernel_fixture();
        let cfg = WalkConfig::default();
        let ag = build_augmented(&s, &cfg).unwrap();
        assert!(ag.transition_distribution(NodeId::game(0), NodeId::game(1), &cfg).is_err());
        assert!(matches!(
            ag.transition_distribution(NodeId::game(9), NodeId::player(0), &cfg),
            Err(Error::NotPresent(_, 0))
        ));
    }

    #[test]
    fn contexts_are_counted_and_bipartite() {
        let s = kernel_fixture();
        let cfg = WalkConfig { contexts_per_edge: 4, walk_length: 3, ..WalkConfig::default() };
        let ag = build_augmented(&s, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(u, v) in &[(0, 0), (0, 2), (1, 1)] {
            let ctx = ag.sample_contexts(EdgeKey::new(u, v), &cfg, &mut rng).unwrap();
            assert_eq!(ctx.len(), 4);
            for c in ctx {
                assert!(s.contains(NodeId::player(c.player)));
                assert!(s.contains(NodeId::game(c.game)));
            }
        }
        assert!(matches!(
            ag.sample_contexts(EdgeKey::new(1, 0), &cfg, &mut rng),
            Err(Error::NoEdge { .. })
        ));
    }

    #[test]
    fn contexts_match_step_replay() {
        let s = kernel_fixture();
        let cfg = WalkConfig { contexts_per_edge: 5, walk_length: 2, epsilon: 0.6, ..WalkConfig::default() };
        let ag = build_augmented(&s, &cfg).unwrap();
        let edge = EdgeKey::new(0, 2);
        let got = ag.sample_contexts(edge, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();

        // Replay: same RNG stream, distributions recomputed from raw weights.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut want = Vec::new();
        'outer: loop {
            let (mut prev, mut cur) = (NodeId::game(edge.game), NodeId::player(edge.player));
            for _ in 0..cfg.walk_length {
                let cands = replay_weights(&s, &ag, prev, cur, &cfg);
                let total: f64 = cands.iter().map(|c| c.1).sum();
                let r: f64 = rng.random();
                let mut acc = 0.0;
                let mut next = cands[cands.len() - 1].0;
                for (n, w) in &cands {
                    acc += w / total;
                    if r < acc {
                        next = *n;
                        break;
                    }
                }
                want.push(if cur.kind == NodeKind::Player {
                    EdgeKey::new(cur.index, next.index)
                } else {
                    EdgeKey::new(next.index, cur.index)
                });
                if want.len() == cfg.contexts_per_edge {
                    break 'outer;
                }
                prev = cur;
                cur = next;
            }
        }
        assert_eq!(got, want);
    }

    /// Candidate weights by direct enumeration of every same-kind node.
    fn replay_weights(
        s: &Snapshot,
        ag: &AugmentedGraph<'_>,
        prev: NodeId,
        cur: NodeId,
        cfg: &WalkConfig,
    ) -> Vec<(NodeId, f64)> {
        let ids: Vec<u32> = match prev.kind {
            NodeKind::Player => s.players().collect(),
            NodeKind::Game => s.games().collect(),
        };
        let linked = |a: NodeId, b: NodeId| {
            let (pl, gm) = if a.kind == NodeKind::Player { (a, b) } else { (b, a) };
            s.has_edge(EdgeKey::new(pl.index, gm.index))
        };
        let other: Vec<NodeId> = match prev.kind {
            NodeKind::Player => s.games().map(NodeId::game).collect(),
            NodeKind::Game => s.players().map(NodeId::player).collect(),
        };
        let mut out = Vec::new();
        for id in ids {
            let o = NodeId { kind: prev.kind, index: id };
            let sim = cosine(s.features(prev).unwrap(), s.features(o).unwrap());
            let w = if o == prev {
                1.0 / cfg.p
            } else if ag.augments(prev).iter().any(|(n, _)| *n == o) {
                sim / cfg.q
            } else if other.iter().any(|&x| linked(prev, x) && linked(o, x)) && linked(cur, o) {
                sim.max(0.0) / cfg.q
            } else {
                0.0
            };
            if w > 0.0 {
                out.push((o, w));
            }
        }
        out
    }

    #[test]
    fn same_seed_same_contexts() {
        let s = kernel_fixture();
        let cfg = WalkConfig::default();
        let ag = build_augmented(&s, &cfg).unwrap();
        let a = ag.sample_contexts(EdgeKey::new(1, 1), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = ag.sample_contexts(EdgeKey::new(1, 1), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(WalkConfig { epsilon: 0.0, ..WalkConfig::default() }.validate().is_err());
        assert!(WalkConfig { epsilon: 1.5, ..WalkConfig::default() }.validate().is_err());
        assert!(WalkConfig { q: 0.0, ..WalkConfig::default() }.validate().is_err());
        assert!(WalkConfig { walk_length: 0, ..WalkConfig::default() }.validate().is_err());
        assert!(WalkConfig::default().validate().is_ok());
    }
}
