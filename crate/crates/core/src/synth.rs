//! Synthetic player-game data with a known churn process.
//!
//! Players and games carry `latent_dim` unit-norm latent blocks. An active
//! pair plays every day until it churns; on day `t` it churns with hazard
//!
//! ```text
//! h = σ(logit(base_hazard) - interaction_strength · mean_k ⟨p_k, g_k⟩ + tenure_coefficient · tenure)
//! ```
//!
//! so well-matched pairs stay longer and every pair grows more likely to
//! leave as it ages. Churn is permanent. Each day every player may pick up a
//! new game, drawn by a Zipf popularity over a shuffled game order. Observed
//! node features are the latents plus Gaussian noise, and latents drift a
//! little every day.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeKey, FeatureSchema, Snapshot, TemporalBipartiteGraph};
use crate::model::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_players: u32,
    pub num_games: u32,
    pub num_days: u32,
    pub churn_window: u32,
    /// Number of latent blocks; also the edge feature dimension.
    pub latent_dim: usize,
    pub block_width: usize,
    pub tenure_coefficient: f64,
    pub base_hazard: f64,
    pub interaction_strength: f64,
    /// Pull of player latents towards a shared taste; zero gives isotropic
    /// players, larger values make some games suit nearly everyone.
    pub taste_concentration: f64,
    /// Standard deviation of the feature noise.
    pub noise: f64,
    /// Standard deviation of the daily latent perturbation before renormalising.
    pub drift: f64,
    /// Games each player starts with on the first day.
    pub initial_games: u32,
    /// Mean number of games a player picks up per day.
    pub arrival_rate: f64,
    /// Zipf exponent of game popularity.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_players: 200,
            num_games: 20,
            num_days: 30,
            churn_window: 3,
            latent_dim: 6,
            block_width: 3,
            tenure_coefficient: 0.05,
            base_hazard: 0.3,
            interaction_strength: 20.0,
            taste_concentration: 3.0,
            noise: 0.05,
            drift: 0.02,
            initial_games: 6,
            arrival_rate: 4.0,
            popularity_skew: 1.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth.{m}")));
        if self.num_players == 0 || self.num_games == 0 || self.num_days == 0 {
            return bad("num_players, num_games and num_days must be positive");
        }
        if self.churn_window == 0 {
            return bad("churn_window must be positive");
        }
        if self.latent_dim == 0 || self.block_width == 0 {
            return bad("latent_dim and block_width must be positive");
        }
        if !(self.base_hazard > 0.0 && self.base_hazard < 1.0) {
            return bad("base_hazard must lie in (0, 1)");
        }
        if !(self.tenure_coefficient >= 0.0 && self.tenure_coefficient.is_finite()) {
            return bad("tenure_coefficient must be finite and non-negative");
        }
        if !self.interaction_strength.is_finite() {
            return bad("interaction_strength must be finite");
        }
        if !(self.taste_concentration >= 0.0 && self.taste_concentration.is_finite()) {
            return bad("taste_concentration must be finite and non-negative");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.drift >= 0.0 && self.drift.is_finite()) {
            return bad("noise and drift must be finite and non-negative");
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad("arrival_rate must be finite and non-negative");
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return bad("popularity_skew must be finite and non-negative");
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::uniform(self.latent_dim, self.block_width)
    }
}

/// True churn hazard of every active pair on every day.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Oracle {
    hazards: BTreeMap<i64, BTreeMap<EdgeKey, f64>>,
}

impl Oracle {
    pub fn day(&self, t: i64) -> Option<&BTreeMap<EdgeKey, f64>> {
        self.hazards.get(&t)
    }

    pub fn get(&self, edge: EdgeKey, t: i64) -> Option<f64> {
        self.hazards.get(&t)?.get(&edge).copied()
    }

    pub fn days(&self) -> impl Iterator<Item = (i64, &BTreeMap<EdgeKey, f64>)> {
        self.hazards.iter().map(|(t, m)| (*t, m))
    }

    /// Writes `player,game,day,hazard` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        w.write_record(["player", "game", "day", "hazard"]).map_err(|e| Error::parse(path, e))?;
        for (t, day) in &self.hazards {
            for (e, h) in day {
                w.write_record([e.player.to_string(), e.game.to_string(), t.to_string(), h.to_string()])
                    .map_err(|e| Error::parse(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut hazards: BTreeMap<i64, BTreeMap<EdgeKey, f64>> = BTreeMap::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            let bad = || Error::parse(path, format!("line {}: malformed oracle row", n + 2));
            if rec.len() != 4 {
                return Err(bad());
            }
            let p: u32 = rec[0].parse().map_err(|_| bad())?;
            let g: u32 = rec[1].parse().map_err(|_| bad())?;
            let t: i64 = rec[2].parse().map_err(|_| bad())?;
            let h: f64 = rec[3].parse().map_err(|_| bad())?;
            hazards.entry(t).or_default().insert(EdgeKey::new(p, g), h);
        }
        Ok(Oracle { hazards })
    }
}

pub const ORACLE_FILE: &str = "oracle.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub graph: TemporalBipartiteGraph,
    pub oracle: Oracle,
}

impl SynthDataset {
    /// Dataset files plus the oracle CSV.
    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::graph::save_dataset(&self.graph, dir)?;
        self.oracle.write_csv(&dir.join(ORACLE_FILE))
    }
}

/// Draws which edges churn, visiting edges in key order with one uniform each.
pub fn bernoulli_churn<R: Rng + ?Sized>(hazards: &BTreeMap<EdgeKey, f64>, rng: &mut R) -> BTreeSet<EdgeKey> {
    hazards.iter().filter(|(_, h)| rng.random::<f64>() < **h).map(|(e, _)| *e).collect()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `latent_dim` unit blocks laid end to end.
fn random_latent<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..cfg.latent_dim * cfg.block_width).map(|_| gaussian(rng)).collect();
    for block in v.chunks_mut(cfg.block_width) {
        normalize(block);
    }
    v
}

fn drift<R: Rng + ?Sized>(v: &mut [f64], cfg: &SynthConfig, rng: &mut R) {
    if cfg.drift == 0.0 {
        return;
    }
    for block in v.chunks_mut(cfg.block_width) {
        for x in block.iter_mut() {
            *x += cfg.drift * gaussian(rng);
        }
        normalize(block);
    }
}

/// Mean blockwise inner product of two latents.
fn affinity(p: &[f64], g: &[f64], cfg: &SynthConfig) -> f64 {
    let sum: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    sum / cfg.latent_dim as f64
}

/// Churn hazard of a pair.
pub fn hazard(cfg: &SynthConfig, affinity: f64, tenure: u32) -> f64 {
    sigmoid(logit(cfg.base_hazard) - cfg.interaction_strength * affinity + cfg.tenure_coefficient * f64::from(tenure))
}

fn observe<R: Rng + ?Sized>(latent: &[f64], cfg: &SynthConfig, rng: &mut R) -> Vec<f64> {
    latent.iter().map(|x| x + if cfg.noise > 0.0 { cfg.noise * gaussian(rng) } else { 0.0 }).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    generate_with_latents(cfg, None)
}

/// Like [`generate`], optionally overriding the initial latents of every
/// player and game.
pub fn generate_with_latents(cfg: &SynthConfig, latents: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = cfg.latent_dim * cfg.block_width;
    let (mut players, mut games) = match latents {
        Some((p, g)) => {
            if p.len() != cfg.num_players as usize || g.len() != cfg.num_games as usize || p.iter().chain(&g).any(|v| v.len() != width) {
                return Err(Error::Config("latent override does not match the configured shapes".into()));
            }
            (p, g)
        }
        None => {
            let taste = random_latent(cfg, &mut rng);
            let p = (0..cfg.num_players)
                .map(|_| {
                    let mut v = random_latent(cfg, &mut rng);
                    v.iter_mut().zip(&taste).for_each(|(x, t)| *x += cfg.taste_concentration * t);
                    v.chunks_mut(cfg.block_width).for_each(normalize);
                    v
                })
                .collect::<Vec<_>>();
            let g = (0..cfg.num_games).map(|_| random_latent(cfg, &mut rng)).collect::<Vec<_>>();
            (p, g)
        }
    };

    let mut order: Vec<u32> = (0..cfg.num_games).collect();
    order.shuffle(&mut rng);
    let mut popularity = vec![0.0; cfg.num_games as usize];
    for (rank, g) in order.iter().enumerate() {
        popularity[*g as usize] = 1.0 / ((rank + 1) as f64).powf(cfg.popularity_skew);
    }
    let pick = WeightedIndex::new(&popularity).map_err(|e| Error::Config(format!("bad popularity weights: {e}")))?;

    // active pair -> tenure in days
    let mut active: BTreeMap<EdgeKey, u32> = BTreeMap::new();
    // pair -> day of its last churn draw
    let mut ended: BTreeMap<EdgeKey, i64> = BTreeMap::new();
    let arrivals = if cfg.arrival_rate > 0.0 {
        Some(Poisson::new(cfg.arrival_rate).map_err(|e| Error::Config(format!("bad arrival rate: {e}")))?)
    } else {
        None
    };
    let start_games = cfg.initial_games.min(cfg.num_games);
    for p in 0..cfg.num_players {
        let mut tries = 0;
        let mut mine = BTreeSet::new();
        while (mine.len() as u32) < start_games && tries < 100 * cfg.num_games {
            mine.insert(pick.sample(&mut rng) as u32);
            tries += 1;
        }
        for g in mine {
            active.insert(EdgeKey::new(p, g), 0);
        }
    }

    let schema = cfg.schema();
    let mut snapshots = Vec::with_capacity(cfg.num_days as usize);
    let mut oracle = Oracle::default();
    for t in 0..i64::from(cfg.num_days) {
        let player_features = players.iter().enumerate().map(|(i, x)| (i as u32, observe(x, cfg, &mut rng))).collect();
        let game_features = games.iter().enumerate().map(|(i, x)| (i as u32, observe(x, cfg, &mut rng))).collect();
        let edges: BTreeSet<EdgeKey> = active.keys().copied().collect();
        snapshots.push(Snapshot::new(t, player_features, game_features, edges, &schema)?);

        let hazards: BTreeMap<EdgeKey, f64> = active
            .iter()
            .map(|(e, &tenure)| (*e, hazard(cfg, affinity(&players[e.player as usize], &games[e.game as usize], cfg), tenure)))
            .collect();
        let churned = bernoulli_churn(&hazards, &mut rng);
        oracle.hazards.insert(t, hazards);

        for e in &churned {
            active.remove(e);
            ended.insert(*e, t);
        }
        for tenure in active.values_mut() {
            *tenure += 1;
        }
        // a churned pair returns only after its whole churn window has passed
        let quiet = i64::from(cfg.churn_window) + 1;
        for p in 0..cfg.num_players {
            let n = arrivals.as_ref().map_or(0, |d| d.sample(&mut rng) as u32);
            for _ in 0..n {
                let e = EdgeKey::new(p, pick.sample(&mut rng) as u32);
                if !active.contains_key(&e) && ended.get(&e).is_none_or(|&c| t - c >= quiet) {
                    active.insert(e, 0);
                }
            }
        }
        for x in players.iter_mut().chain(games.iter_mut()) {
            drift(x, cfg, &mut rng);
        }
    }
    let graph = TemporalBipartiteGraph::new(schema, cfg.churn_window, snapshots)?;
    Ok(SynthDataset { graph, oracle })
}

/// `|N_v(t) \ N_v(t+1)|` for every game present on day `t`.
pub fn realized_churn_counts(g: &TemporalBipartiteGraph, t: i64) -> Result<BTreeMap<u32, u32>> {
    let cur = g.snapshot(t)?;
    let next = g.snapshot(t + 1).map_err(|_| Error::OutOfRange(t + 1))?;
    let mut counts: BTreeMap<u32, u32> = cur.games().map(|v| (v, 0)).collect();
    for e in cur.edges() {
        if !next.has_edge(*e) {
            *counts.entry(e.game).or_default() += 1;
        }
    }
    Ok(counts)
}

/// Per-game churn counts of one realisation drawn from `hazards`.
pub fn realize_counts<R: Rng + ?Sized>(hazards: &BTreeMap<EdgeKey, f64>, games: impl IntoIterator<Item = u32>, rng: &mut R) -> BTreeMap<u32, u32> {
    let mut counts: BTreeMap<u32, u32> = games.into_iter().map(|g| (g, 0)).collect();
    for e in bernoulli_churn(hazards, rng) {
        *counts.entry(e.game).or_default() += 1;
    }
    counts
}

pub fn write_config(path: &Path, cfg: &SynthConfig) -> Result<()> {
    let raw = toml::to_string(cfg).map_err(|e| Error::parse(path, e))?;
    fs::write(path, raw).map_err(|e| Error::io(path, e))
}
