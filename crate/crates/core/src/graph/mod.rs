//! Temporal attributed bipartite graph of players and games.
//!
//! A [`TemporalBipartiteGraph`] is a run of daily [`Snapshot`]s. Snapshot `t`
//! holds the player and game nodes observed that day with their feature
//! vectors, and the player-game pairs with a play record on day `t`.
//!
//! Churn labels look forward: the label of an edge present on day `i` is
//! decided by the plays in the window `[i + 2, i + T + 1]` (the edge indicator
//! of day `i + 1`). Windows that run past the end of observation without a
//! play are right-censored.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, DatasetManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Player,
    Game,
}

/// A node of the bipartite graph. Indices are unique within a kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeId {
    pub fn player(index: u32) -> Self {
        NodeId { kind: NodeKind::Player, index }
    }

    pub fn game(index: u32) -> Self {
        NodeId { kind: NodeKind::Game, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Player => write!(f, "player {}", self.index),
            NodeKind::Game => write!(f, "game {}", self.index),
        }
    }
}

/// A player-game pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub player: u32,
    pub game: u32,
}

impl EdgeKey {
    pub fn new(player: u32, game: u32) -> Self {
        EdgeKey { player, game }
    }
}

/// One aligned pair of feature ranges. The edge feature for this block is the
/// cosine similarity of `player_features[player]` and `game_features[game]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPair {
    pub player: Range<usize>,
    pub game: Range<usize>,
}

/// Declares node feature widths and the block pairing that produces the
/// `d`-dimensional edge feature vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    pub player_dim: usize,
    pub game_dim: usize,
    pub blocks: Vec<BlockPair>,
}

impl FeatureSchema {
    pub fn new(player_dim: usize, game_dim: usize, blocks: Vec<BlockPair>) -> Result<Self> {
        let schema = FeatureSchema { player_dim, game_dim, blocks };
        schema.validate()?;
        Ok(schema)
    }

    /// `blocks` consecutive blocks of `width` on both sides.
    pub fn uniform(blocks: usize, width: usize) -> Self {
        let pairs = (0..blocks)
            .map(|k| BlockPair { player: k * width..(k + 1) * width, game: k * width..(k + 1) * width })
            .collect();
        FeatureSchema { player_dim: blocks * width, game_dim: blocks * width, blocks: pairs }
    }

    pub fn edge_dim(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Schema("schema declares no feature blocks".into()));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.player.is_empty() || b.game.is_empty() {
                return Err(Error::Schema(format!("block {k} is empty")));
            }
            if b.player.len() != b.game.len() {
                return Err(Error::Schema(format!(
                    "block {k} pairs {} player attributes with {} game attributes",
                    b.player.len(),
                    b.game.len()
                )));
            }
            if b.player.end > self.player_dim || b.game.end > self.game_dim {
                return Err(Error::Schema(format!("block {k} exceeds the declared feature width")));
            }
        }
        Ok(())
    }
}

/// Cosine similarity with the zero-norm convention: 0 when either side is 0.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (dot / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// The graph observed on one day.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: i64,
    players: BTreeMap<u32, Vec<f64>>,
    games: BTreeMap<u32, Vec<f64>>,
    edges: BTreeSet<EdgeKey>,
}

impl Snapshot {
    /// Builds a snapshot, checking that every edge endpoint is present and that
    /// feature vectors have the schema widths.
    pub fn new(
        t: i64,
        players: BTreeMap<u32, Vec<f64>>,
        games: BTreeMap<u32, Vec<f64>>,
        edges: BTreeSet<EdgeKey>,
        schema: &FeatureSchema,
    ) -> Result<Self> {
        for (id, x) in &players {
            if x.len() != schema.player_dim {
                return Err(Error::Schema(format!(
                    "player {id} on day {t} has {} features, expected {}",
                    x.len(),
                    schema.player_dim
                )));
            }
        }
        for (id, x) in &games {
            if x.len() != schema.game_dim {
                return Err(Error::Schema(format!(
                    "game {id} on day {t} has {} features, expected {}",
                    x.len(),
                    schema.game_dim
                )));
            }
        }
        for e in &edges {
            if !players.contains_key(&e.player) {
                return Err(Error::NotPresent(NodeId::player(e.player).to_string(), t));
            }
            if !games.contains_key(&e.game) {
                return Err(Error::NotPresent(NodeId::game(e.game).to_string(), t));
            }
        }
        Ok(Snapshot { t, players, games, edges })
    }

    pub fn players(&self) -> impl Iterator<Item = u32> + '_ {
        self.players.keys().copied()
    }

    pub fn games(&self) -> impl Iterator<Item = u32> + '_ {
        self.games.keys().copied()
    }

    pub fn edges(&self) -> &BTreeSet<EdgeKey> {
        &self.edges
    }

    pub fn has_edge(&self, edge: EdgeKey) -> bool {
        self.edges.contains(&edge)
    }

    pub fn features(&self, node: NodeId) -> Option<&[f64]> {
        match node.kind {
            NodeKind::Player => self.players.get(&node.index).map(Vec::as_slice),
            NodeKind::Game => self.games.get(&node.index).map(Vec::as_slice),
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.features(node).is_some()
    }

    pub fn player_features(&self) -> &BTreeMap<u32, Vec<f64>> {
        &self.players
    }

    pub fn game_features(&self) -> &BTreeMap<u32, Vec<f64>> {
        &self.games
    }

    /// Per-block cosine similarities between the player's and the game's
    /// features on this day.
    pub fn edge_features(&self, schema: &FeatureSchema, player: u32, game: u32) -> Result<Vec<f64>> {
        let xu = self
            .players
            .get(&player)
            .ok_or_else(|| Error::NotPresent(NodeId::player(player).to_string(), self.t))?;
        let xv = self
            .games
            .get(&game)
            .ok_or_else(|| Error::NotPresent(NodeId::game(game).to_string(), self.t))?;
        let mut z = Vec::with_capacity(schema.blocks.len());
        for (k, b) in schema.blocks.iter().enumerate() {
            let (Some(a), Some(c)) = (xu.get(b.player.clone()), xv.get(b.game.clone())) else {
                return Err(Error::Schema(format!("block {k} is out of range for the node features")));
            };
            if a.len() != c.len() {
                return Err(Error::Schema(format!("block {k} has mismatched widths")));
            }
            z.push(cosine(a, c));
        }
        Ok(z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelValue {
    Stay,
    Churn,
    Unknown,
}

/// Churn label of an edge on a given day, with its censoring indicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeLabel {
    pub value: LabelValue,
    /// `true` when the label is observed (censoring indicator δ = 1).
    pub observed: bool,
    /// Last day on or before this one whose label for the pair is observed.
    pub last_observed: Option<i64>,
}

impl EdgeLabel {
    /// The edge indicator of the next day, `e^(i+1)`, when observed.
    pub fn next_edge(&self) -> Option<bool> {
        match self.value {
            LabelValue::Stay => Some(true),
            LabelValue::Churn => Some(false),
            LabelValue::Unknown => None,
        }
    }

    pub fn censor(&self) -> u8 {
        u8::from(self.observed)
    }
}

/// Daily snapshots from the first to the last observed day.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBipartiteGraph {
    schema: FeatureSchema,
    churn_window: u32,
    snapshots: Vec<Snapshot>,
}

impl TemporalBipartiteGraph {
    pub fn new(schema: FeatureSchema, churn_window: u32, snapshots: Vec<Snapshot>) -> Result<Self> {
        schema.validate()?;
        if churn_window < 1 {
            return Err(Error::Data("churn window must be at least one day".into()));
        }
        if snapshots.is_empty() {
            return Err(Error::Data("graph has no snapshots".into()));
        }
        for w in snapshots.windows(2) {
            if w[1].t != w[0].t + 1 {
                return Err(Error::Data(format!(
                    "snapshot days must increase by one, found {} after {}",
                    w[1].t, w[0].t
                )));
            }
        }
        Ok(TemporalBipartiteGraph { schema, churn_window, snapshots })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn churn_window(&self) -> u32 {
        self.churn_window
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn first_day(&self) -> i64 {
        self.snapshots[0].t
    }

    pub fn last_day(&self) -> i64 {
        self.snapshots[self.snapshots.len() - 1].t
    }

    pub fn days(&self) -> impl Iterator<Item = i64> {
        self.first_day()..=self.last_day()
    }

    pub fn snapshot(&self, t: i64) -> Result<&Snapshot> {
        if t < self.first_day() || t > self.last_day() {
            return Err(Error::OutOfRange(t));
        }
        Ok(&self.snapshots[(t - self.first_day()) as usize])
    }

    pub fn has_edge(&self, edge: EdgeKey, t: i64) -> bool {
        self.snapshot(t).map(|s| s.has_edge(edge)).unwrap_or(false)
    }

    /// Edge feature vector `z_uv^(t)`.
    pub fn edge_features(&self, player: u32, game: u32, t: i64) -> Result<Vec<f64>> {
        self.snapshot(t)?.edge_features(&self.schema, player, game)
    }

    /// Label of edge `(player, game)` on day `i` using every observed day.
    pub fn edge_label(&self, player: u32, game: u32, i: i64) -> Result<EdgeLabel> {
        self.edge_label_within(player, game, i, self.last_day())
    }

    /// Label of edge `(player, game)` on day `i` as seen by an observer whose
    /// data ends at `horizon` (inclusive).
    pub fn edge_label_within(&self, player: u32, game: u32, i: i64, horizon: i64) -> Result<EdgeLabel> {
        let horizon = horizon.min(self.last_day());
        let edge = EdgeKey::new(player, game);
        if i > horizon {
            return Err(Error::OutOfRange(i));
        }
        if !self.snapshot(i)?.has_edge(edge) {
            return Err(Error::NoEdge { player, game, day: i });
        }
        let value = self.window_value(edge, i, horizon);
        if value != LabelValue::Unknown {
            return Ok(EdgeLabel { value, observed: true, last_observed: Some(i) });
        }
        let last_observed = (self.first_day()..i)
            .rev()
            .find(|&j| self.has_edge(edge, j) && self.window_value(edge, j, horizon) != LabelValue::Unknown);
        Ok(EdgeLabel { value, observed: false, last_observed })
    }

    fn window_value(&self, edge: EdgeKey, i: i64, horizon: i64) -> LabelValue {
        let lo = i + 2;
        let hi = i + i64::from(self.churn_window) + 1;
        if (lo..=hi.min(horizon)).any(|j| self.has_edge(edge, j)) {
            LabelValue::Stay
        } else if hi <= horizon {
            LabelValue::Churn
        } else {
            LabelValue::Unknown
        }
    }

    /// Edges present on both day `i` and day `i + 1`.
    pub fn persistent_edges(&self, i: i64) -> Result<BTreeSet<EdgeKey>> {
        let cur = self.snapshot(i)?;
        let next = self.snapshot(i + 1)?;
        Ok(cur.edges.intersection(&next.edges).copied().collect())
    }
}
