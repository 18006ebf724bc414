//! Command-line driver: `synth`, `train`, `predict`, `rank` and `eval`.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage
//! or configuration error, 3 numeric failure during training.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_dataset, EdgeKey, LabelValue, TemporalBipartiteGraph};
use crate::metrics::{
    auc, average_precision, avg_precision_at_k, kendall_tau, precision_recall, spearman, weighted_kendall_tau, write_report,
    MetricRecord,
};
use crate::model::Checkpoint;
use crate::rank::{rank_games, read_ranked_list, score_games, write_ranked_list, HitsConfig, PageRankConfig, RankMethod, RankedList, RelationGraph};
use crate::synth::{generate, realized_churn_counts, write_config, Oracle, SynthConfig, ORACLE_FILE};
use crate::train::{chronological_split, predict, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const RANKS_DIR: &str = "ranks";
pub const TRUTH_LABEL: &str = "truth";

/// Cut-offs reported for AP@K; values above the list length are skipped.
pub const K_GRID: [usize; 9] = [1, 2, 5, 10, 20, 50, 100, 200, 500];

#[derive(Debug, Parser)]
#[command(name = "gamechurn", version, about = "Churn prediction and churn ranking on temporal player-game graphs")]
pub struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides both the synth and the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `paths.dataset`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Overrides `paths.run`.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its oracle hazards.
    Synth(Common),
    /// Train on the chronological prefix; writes a checkpoint and an epoch log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write churn probabilities of every edge on the test days.
    Predict(Common),
    /// Rank games on every test day.
    Rank {
        #[command(flatten)]
        common: Common,
        /// simsum, pagerank, hits or all.
        #[arg(long, default_value = "all")]
        method: String,
        /// Use the dataset's oracle hazards instead of the checkpoint.
        #[arg(long)]
        oracle: bool,
    },
    /// Score every ranked list and prediction file of the run.
    Eval(Common),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub run: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSettings {
    pub pagerank: PageRankConfig,
    pub hits: HitsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Largest K for AP@K and the cut-off of the per-day average precision.
    pub k_max: usize,
    /// Churn-probability threshold for precision and recall.
    pub threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { k_max: 500, threshold: 0.5 }
    }
}

/// Everything one run needs; only `paths` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub rank: RankSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl RunConfig {
    /// Parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.dataset = base.join(&cfg.paths.dataset);
        cfg.paths.run = base.join(&cfg.paths.run);
        Ok(cfg)
    }

    fn apply(&mut self, common: &Common) {
        if let Some(seed) = common.seed {
            self.synth.seed = seed;
            self.train.seed = seed;
        }
        if let Some(d) = &common.dataset {
            self.paths.dataset = d.clone();
        }
        if let Some(r) = &common.run {
            self.paths.run = r.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.rank.pagerank.validate()?;
        if self.eval.k_max == 0 {
            return Err(Error::Config("eval.k_max must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::Config("eval.threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Config(_) | Error::Parse { .. } | Error::Schema(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| match &cli.command {
        Command::Synth(c) => cmd_synth(&config(c)?),
        Command::Train { common, epochs } => {
            let mut cfg = config(common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cmd_train(&cfg)
        }
        Command::Predict(c) => cmd_predict(&config(c)?),
        Command::Rank { common, method, oracle } => {
            let methods = if method == "all" { RankMethod::ALL.to_vec() } else { vec![method.parse()?] };
            cmd_rank(&config(common)?, &methods, *oracle)
        }
        Command::Eval(c) => cmd_eval(&config(c)?),
    })
}

fn config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(common);
    cfg.validate()?;
    Ok(cfg)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} directory {} does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("row serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let data = generate(&cfg.synth)?;
    data.save(&cfg.paths.dataset)?;
    write_config(&cfg.paths.dataset.join("synth.toml"), &cfg.synth)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    require_dir(&cfg.paths.dataset, "dataset")?;
    let g = load_dataset(&cfg.paths.dataset)?;
    let out = train(&g, &cfg.train)?;
    let run = &cfg.paths.run;
    fs::create_dir_all(run).map_err(|e| Error::io(run, e))?;
    out.checkpoint.save(&run.join(CHECKPOINT_FILE))?;
    write_jsonl(&run.join(TRAIN_LOG_FILE), &out.log)?;
    match out.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn load_run(cfg: &RunConfig) -> Result<(TemporalBipartiteGraph, Vec<i64>)> {
    require_dir(&cfg.paths.dataset, "dataset")?;
    let g = load_dataset(&cfg.paths.dataset)?;
    let (_, test_days) = chronological_split(&g, cfg.train.split_fraction)?;
    Ok((g, test_days))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.paths.run.join(CHECKPOINT_FILE);
    require_file(&path, "checkpoint")?;
    Checkpoint::load(&path)
}

fn day_file(dir: &Path, label: &str, t: i64) -> PathBuf {
    dir.join(format!("{label}_day{t}.csv"))
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let (g, days) = load_run(cfg)?;
    let ck = load_checkpoint(cfg)?;
    let dir = cfg.paths.run.join(PREDICTIONS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for t in days {
        write_predictions(&day_file(&dir, "model", t), t, &predict(&ck.params, &g, t)?)?;
    }
    Ok(())
}

/// Writes `player,game,day,probability` rows.
pub fn write_predictions(path: &Path, t: i64, probs: &BTreeMap<EdgeKey, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(["player", "game", "day", "probability"]).map_err(|e| Error::parse(path, e))?;
    for (e, p) in probs {
        w.write_record([e.player.to_string(), e.game.to_string(), t.to_string(), p.to_string()])
            .map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<EdgeKey, f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut out = BTreeMap::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let bad = || Error::parse(path, format!("line {}: malformed prediction row", n + 2));
        if rec.len() != 4 {
            return Err(bad());
        }
        let player: u32 = rec[0].parse().map_err(|_| bad())?;
        let game: u32 = rec[1].parse().map_err(|_| bad())?;
        let p: f64 = rec[3].parse().map_err(|_| bad())?;
        out.insert(EdgeKey::new(player, game), p);
    }
    Ok(out)
}

pub fn cmd_rank(cfg: &RunConfig, methods: &[RankMethod], oracle: bool) -> Result<()> {
    let (g, days) = load_run(cfg)?;
    let source: Box<dyn Fn(i64) -> Result<BTreeMap<EdgeKey, f64>>> = if oracle {
        let path = cfg.paths.dataset.join(ORACLE_FILE);
        require_file(&path, "oracle file")?;
        let o = Oracle::read_csv(&path)?;
        Box::new(move |t| o.day(t).cloned().ok_or_else(|| Error::Data(format!("the oracle has no hazards for day {t}"))))
    } else {
        let ck = load_checkpoint(cfg)?;
        let g = g.clone();
        Box::new(move |t| predict(&ck.params, &g, t))
    };
    let dir = cfg.paths.run.join(RANKS_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for &t in &days {
        let rg = RelationGraph::from_snapshot(g.snapshot(t)?, &source(t)?)?;
        for &m in methods {
            let label = if oracle { format!("oracle-{}", m.name()) } else { m.name().to_string() };
            let list = rank_games(&score_games(&rg, m, &cfg.rank.pagerank, &cfg.rank.hits)?);
            write_ranked_list(&day_file(&dir, &label, t), &list, &label)?;
        }
        let counts = realized_churn_counts(&g, t)?;
        let truth = rank_games(&counts.into_iter().map(|(v, c)| (v, f64::from(c))).collect());
        write_ranked_list(&day_file(&dir, TRUTH_LABEL, t), &truth, TRUTH_LABEL)?;
    }
    Ok(())
}

/// `label_day<t>.csv` files of a directory, grouped by label.
fn day_files(dir: &Path) -> Result<BTreeMap<String, BTreeMap<i64, PathBuf>>> {
    let mut out: BTreeMap<String, BTreeMap<i64, PathBuf>> = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).filter(|_| path.extension().is_some_and(|x| x == "csv")) else {
            continue;
        };
        if let Some((label, day)) = stem.rsplit_once("_day") {
            if let Ok(t) = day.parse::<i64>() {
                out.entry(label.to_string()).or_default().insert(t, path.clone());
            }
        }
    }
    Ok(out)
}

/// Rank metrics of one predicted list against the truth list.
pub fn ranking_metrics(pred: &RankedList, truth: &RankedList, k_max: usize) -> Result<Vec<(String, f64)>> {
    let pred_items: BTreeSet<u32> = pred.order().into_iter().collect();
    let truth_items: BTreeSet<u32> = truth.order().into_iter().collect();
    if pred_items != truth_items {
        return Err(Error::Config("predicted and truth lists rank different games".into()));
    }
    let mut out = vec![
        ("kendall_tau".to_string(), kendall_tau(pred, truth)?),
        ("weighted_kendall_tau".to_string(), weighted_kendall_tau(pred, truth)?),
        ("spearman".to_string(), spearman(pred, truth)?),
    ];
    let cap = k_max.min(pred.len());
    for k in K_GRID.into_iter().filter(|&k| k <= cap) {
        out.push((format!("ap@{k}"), avg_precision_at_k(pred, truth, k)?));
    }
    out.push(("ap".to_string(), average_precision(pred, truth, cap)?));
    Ok(out)
}

/// Adds one averaged record per (method, metric); `ap` averages to `map`.
fn push_averages(records: &mut Vec<MetricRecord>, method: &str, per_day: &BTreeMap<String, Vec<f64>>) {
    for (metric, values) in per_day {
        let name = if metric == "ap" { "map".to_string() } else { metric.clone() };
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        records.push(MetricRecord { day: None, method: method.to_string(), metric: name, value: mean });
    }
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let (g, _) = load_run(cfg)?;
    let mut records = Vec::new();

    let mut ranked = day_files(&cfg.paths.run.join(RANKS_DIR))?;
    let truth = ranked.remove(TRUTH_LABEL).unwrap_or_default();
    for (label, files) in &ranked {
        let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (t, path) in files {
            let truth_path = truth
                .get(t)
                .ok_or_else(|| Error::Config(format!("no truth list for day {t} to score {}", path.display())))?;
            let (pred, _) = read_ranked_list(path)?;
            let (tl, _) = read_ranked_list(truth_path)?;
            for (metric, value) in ranking_metrics(&pred, &tl, cfg.eval.k_max)? {
                per_metric.entry(metric.clone()).or_default().push(value);
                records.push(MetricRecord { day: Some(*t), method: label.clone(), metric, value });
            }
        }
        push_averages(&mut records, label, &per_metric);
    }

    let predictions = day_files(&cfg.paths.run.join(PREDICTIONS_DIR))?;
    for (label, files) in &predictions {
        let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (t, path) in files {
            let probs = read_predictions(path)?;
            let mut scored = Vec::with_capacity(probs.len());
            for (e, p) in &probs {
                let l = g.edge_label(e.player, e.game, *t).map_err(|_| {
                    Error::Config(format!("{} lists edge ({}, {}) absent from day {t}", path.display(), e.player, e.game))
                })?;
                match l.value {
                    LabelValue::Stay => scored.push((*p, false)),
                    LabelValue::Churn => scored.push((*p, true)),
                    LabelValue::Unknown => {}
                }
            }
            let pr = precision_recall(&scored, cfg.eval.threshold);
            let values = [("auc", auc(&scored).ok()), ("precision", pr.precision), ("recall", pr.recall)];
            for (metric, value) in values {
                if let Some(value) = value {
                    per_metric.entry(metric.to_string()).or_default().push(value);
                    records.push(MetricRecord { day: Some(*t), method: label.clone(), metric: metric.to_string(), value });
                }
            }
        }
        push_averages(&mut records, label, &per_metric);
    }

    if records.is_empty() {
        return Err(Error::Config(format!("nothing to evaluate under {}; run rank or predict first", cfg.paths.run.display())));
    }
    write_report(&cfg.paths.run.join(REPORT_FILE), &records)
}
