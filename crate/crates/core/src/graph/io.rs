//! CSV dataset layout.
//!
//! A dataset directory holds:
//!
//! * `schema.toml`: churn window, observed day range, feature widths and the
//!   block pairing (`[player_start, player_end, game_start, game_end]`, half-open);
//! * `plays.csv`: `user_id,game_id,day` plus any extra context columns, which
//!   are ignored;
//! * `player_features.csv`: `player_id,day,x0,x1,...`;
//! * `game_features.csv`: `game_id,day,x0,x1,...`.
//!
//! A node is present on a day iff it has a feature row for that day.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BlockPair, EdgeKey, FeatureSchema, Snapshot, TemporalBipartiteGraph};
use crate::error::{Error, Result};

pub const SCHEMA_FILE: &str = "schema.toml";
pub const PLAYS_FILE: &str = "plays.csv";
pub const PLAYER_FEATURES_FILE: &str = "player_features.csv";
pub const GAME_FEATURES_FILE: &str = "game_features.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub churn_window: u32,
    pub first_day: i64,
    pub last_day: i64,
    pub player_dim: usize,
    pub game_dim: usize,
    pub blocks: Vec<[usize; 4]>,
}

impl DatasetManifest {
    pub fn schema(&self) -> Result<FeatureSchema> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockPair { player: b[0]..b[1], game: b[2]..b[3] })
            .collect();
        FeatureSchema::new(self.player_dim, self.game_dim, blocks)
    }

    fn of(g: &TemporalBipartiteGraph) -> Self {
        let s = g.schema();
        DatasetManifest {
            churn_window: g.churn_window(),
            first_day: g.first_day(),
            last_day: g.last_day(),
            player_dim: s.player_dim,
            game_dim: s.game_dim,
            blocks: s
                .blocks
                .iter()
                .map(|b| [b.player.start, b.player.end, b.game.start, b.game.end])
                .collect(),
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e)
}

pub fn save_dataset(g: &TemporalBipartiteGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = toml::to_string(&DatasetManifest::of(g)).map_err(|e| Error::parse(dir.join(SCHEMA_FILE), e))?;
    fs::write(dir.join(SCHEMA_FILE), manifest).map_err(|e| Error::io(dir.join(SCHEMA_FILE), e))?;

    let path = dir.join(PLAYS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["user_id", "game_id", "day"]).map_err(|e| csv_err(&path, e))?;
    for s in g.snapshots() {
        for e in s.edges() {
            w.write_record([e.player.to_string(), e.game.to_string(), s.t.to_string()])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_features(g, &dir.join(PLAYER_FEATURES_FILE), "player_id", g.schema().player_dim, |s| s.player_features())?;
    write_features(g, &dir.join(GAME_FEATURES_FILE), "game_id", g.schema().game_dim, |s| s.game_features())
}

fn write_features(
    g: &TemporalBipartiteGraph,
    path: &Path,
    id_column: &str,
    dim: usize,
    select: impl Fn(&Snapshot) -> &BTreeMap<u32, Vec<f64>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec![id_column.to_string(), "day".to_string()];
    header.extend((0..dim).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in g.snapshots() {
        for (id, x) in select(s) {
            let mut row = Vec::with_capacity(dim + 2);
            row.push(id.to_string());
            row.push(s.t.to_string());
            // `Display` for f64 prints the shortest string that parses back to the same bits.
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("line {line}: cannot parse {name} from {raw:?}")))
}

type FeatureRows = BTreeMap<i64, BTreeMap<u32, Vec<f64>>>;

fn read_features(path: &Path, dim: usize) -> Result<FeatureRows> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: FeatureRows = BTreeMap::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = n as u64 + 2;
        if rec.len() != dim + 2 {
            return Err(Error::parse(
                path,
                format!("line {line}: expected {} columns, found {}", dim + 2, rec.len()),
            ));
        }
        let id: u32 = parse_field(path, line, "node id", &rec[0])?;
        let day: i64 = parse_field(path, line, "day", &rec[1])?;
        let x = (2..rec.len())
            .map(|k| parse_field::<f64>(path, line, "feature", &rec[k]))
            .collect::<Result<Vec<_>>>()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, format!("line {line}: non-finite feature value")));
        }
        if out.entry(day).or_default().insert(id, x).is_some() {
            return Err(Error::parse(path, format!("line {line}: duplicate row for node {id} on day {day}")));
        }
    }
    Ok(out)
}

fn read_plays(path: &Path) -> Result<BTreeMap<i64, BTreeSet<EdgeKey>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::parse(path, format!("missing column {name}")))
    };
    let (cu, cg, cd) = (column("user_id")?, column("game_id")?, column("day")?);
    let mut out: BTreeMap<i64, BTreeSet<EdgeKey>> = BTreeMap::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = n as u64 + 2;
        let get = |c: usize| rec.get(c).ok_or_else(|| Error::parse(path, format!("line {line}: short row")));
        let u: u32 = parse_field(path, line, "user_id", get(cu)?)?;
        let v: u32 = parse_field(path, line, "game_id", get(cg)?)?;
        let day: i64 = parse_field(path, line, "day", get(cd)?)?;
        // several records on one day collapse into one edge
        out.entry(day).or_default().insert(EdgeKey::new(u, v));
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<TemporalBipartiteGraph> {
    let manifest_path = dir.join(SCHEMA_FILE);
    let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = toml::from_str(&raw).map_err(|e| Error::parse(&manifest_path, e))?;
    let schema = manifest.schema()?;
    if manifest.last_day < manifest.first_day {
        return Err(Error::parse(&manifest_path, "last_day precedes first_day"));
    }

    let mut plays = read_plays(&dir.join(PLAYS_FILE))?;
    let mut players = read_features(&dir.join(PLAYER_FEATURES_FILE), schema.player_dim)?;
    let mut games = read_features(&dir.join(GAME_FEATURES_FILE), schema.game_dim)?;
    let outside = |d: &i64| *d < manifest.first_day || *d > manifest.last_day;
    if let Some(d) = plays.keys().chain(players.keys()).chain(games.keys()).find(|d| outside(d)) {
        return Err(Error::Data(format!("record on day {d} is outside the declared day range")));
    }

    let snapshots = (manifest.first_day..=manifest.last_day)
        .map(|t| {
            Snapshot::new(
                t,
                players.remove(&t).unwrap_or_default(),
                games.remove(&t).unwrap_or_default(),
                plays.remove(&t).unwrap_or_default(),
                &schema,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TemporalBipartiteGraph::new(schema, manifest.churn_window, snapshots)
}
