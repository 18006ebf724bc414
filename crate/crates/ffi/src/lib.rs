//! C ABI over the `gamechurn` library.
//!
//! Every entry point returns a [`GcStatus`]; on failure the message is kept
//! per thread and read with [`gc_last_error`]. Objects cross the boundary as
//! opaque handles that the caller releases with the matching `_free`
//! function. Panics never unwind into C; they surface as `GC_STATUS_PANIC`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gamechurn::graph::{load_dataset, EdgeKey, TemporalBipartiteGraph};
use gamechurn::metrics::kendall_tau;
use gamechurn::model::Checkpoint;
use gamechurn::rank::{rank_games, score_games, HitsConfig, PageRankConfig, RankMethod, RankedList, RelationGraph};
use gamechurn::synth::{generate, Oracle, SynthConfig, ORACLE_FILE};
use gamechurn::train::{predict, train, TrainConfig};
use gamechurn::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Data = 6,
    OutOfRange = 7,
    Numeric = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcRankMethod {
    Simsum = 0,
    Pagerank = 1,
    Hits = 2,
}

fn rank_method(raw: u32) -> Result<RankMethod, Fail> {
    match raw {
        x if x == GcRankMethod::Simsum as u32 => Ok(RankMethod::Simsum),
        x if x == GcRankMethod::Pagerank as u32 => Ok(RankMethod::Pagerank),
        x if x == GcRankMethod::Hits as u32 => Ok(RankMethod::Hits),
        _ => Err(Fail(GcStatus::InvalidArgument, format!("unknown ranking method {raw}"))),
    }
}

/// A loaded or generated dataset, with oracle hazards when synthetic.
pub struct GcDataset {
    graph: TemporalBipartiteGraph,
    oracle: Option<Oracle>,
}

/// A trained model.
pub struct GcModel {
    checkpoint: Checkpoint,
}

/// Games ordered by descending score.
pub struct GcRanking {
    list: RankedList,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // interior NULs cannot cross into C
    let msg = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> GcStatus {
    match e {
        Error::Io { .. } => GcStatus::Io,
        Error::Parse { .. } => GcStatus::Parse,
        Error::Config(_) => GcStatus::Config,
        Error::Numeric(_) => GcStatus::Numeric,
        Error::OutOfRange(_) | Error::Vocab { .. } => GcStatus::OutOfRange,
        _ => GcStatus::Data,
    }
}

struct Fail(GcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GcStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, recording its error and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(GcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(())
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Fail> {
    toml::from_str(text).map_err(|e| Fail(GcStatus::Config, format!("{what}: {}", e.message())))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset directory; oracle hazards are read when present.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_load(path: *const c_char, out: *mut *mut GcDataset) -> GcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let dir = PathBuf::from(str_arg(path, "path")?);
        let graph = load_dataset(&dir)?;
        let oracle_path = dir.join(ORACLE_FILE);
        let oracle = if oracle_path.is_file() { Some(Oracle::read_csv(&oracle_path)?) } else { None };
        *out = Box::into_raw(Box::new(GcDataset { graph, oracle }));
        Ok(())
    })
}

/// Generates a synthetic dataset from a TOML synth configuration; an empty
/// string selects the defaults.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_synth(config_toml: *const c_char, out: *mut *mut GcDataset) -> GcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let cfg: SynthConfig = parse_toml(str_arg(config_toml, "config_toml")?, "synth config")?;
        let data = generate(&cfg)?;
        *out = Box::into_raw(Box::new(GcDataset { graph: data.graph, oracle: Some(data.oracle) }));
        Ok(())
    })
}

/// Writes the dataset (and its oracle, if any) to a directory.
///
/// # Safety
/// `dataset` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_save(dataset: *const GcDataset, path: *const c_char) -> GcStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let dir = PathBuf::from(str_arg(path, "path")?);
        gamechurn::graph::save_dataset(&ds.graph, &dir)?;
        if let Some(o) = &ds.oracle {
            o.write_csv(&dir.join(ORACLE_FILE))?;
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_free(dataset: *mut GcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// First and last observed day.
///
/// # Safety
/// `dataset` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_days(dataset: *const GcDataset, first: *mut i64, last: *mut i64) -> GcStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        out_ptr(first, "first")?;
        out_ptr(last, "last")?;
        *first = ds.graph.first_day();
        *last = ds.graph.last_day();
        Ok(())
    })
}

/// Number of edges on `day`.
///
/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_dataset_edge_count(dataset: *const GcDataset, day: i64, out: *mut usize) -> GcStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        out_ptr(out, "out")?;
        *out = ds.graph.snapshot(day)?.edges().len();
        Ok(())
    })
}

/// Trains a model; `config_toml` holds a training configuration and may be
/// empty for the defaults. Runs on `threads` worker threads (0 means 1).
///
/// # Safety
/// `dataset` must come from this library, `config_toml` be NUL-terminated
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gc_model_train(
    dataset: *const GcDataset,
    config_toml: *const c_char,
    threads: usize,
    out: *mut *mut GcModel,
) -> GcStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        out_ptr(out, "out")?;
        let cfg: TrainConfig = parse_toml(str_arg(config_toml, "config_toml")?, "train config")?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Fail(GcStatus::InvalidArgument, format!("cannot start threads: {e}")))?;
        let result = pool.install(|| train(&ds.graph, &cfg))?;
        if let Some(e) = result.failure {
            return Err(e.into());
        }
        *out = Box::into_raw(Box::new(GcModel { checkpoint: result.checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gc_model_load(path: *const c_char, out: *mut *mut GcModel) -> GcStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let checkpoint = Checkpoint::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(GcModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gc_model_save(model: *const GcModel, path: *const c_char) -> GcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.checkpoint.save(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gc_model_free(model: *mut GcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Churn probabilities of every edge on `day`, in (player, game) order.
///
/// `*len` receives the edge count. When `capacity` is smaller the arrays are
/// left untouched and `GC_STATUS_BUFFER_TOO_SMALL` is returned, so a call
/// with capacity 0 queries the size.
///
/// # Safety
/// Handles must come from this library; each array must hold `capacity`
/// elements (or be null when `capacity` is 0) and `len` be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_model_predict(
    model: *const GcModel,
    dataset: *const GcDataset,
    day: i64,
    players: *mut u32,
    games: *mut u32,
    probabilities: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> GcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        out_ptr(len, "len")?;
        let probs = predict(&m.checkpoint.params, &ds.graph, day)?;
        *len = probs.len();
        if capacity < probs.len() {
            return Err(Fail(GcStatus::BufferTooSmall, format!("need room for {} edges, got {capacity}", probs.len())));
        }
        if probs.is_empty() {
            return Ok(());
        }
        out_ptr(players, "players")?;
        out_ptr(games, "games")?;
        out_ptr(probabilities, "probabilities")?;
        for (i, (e, p)) in probs.into_iter().enumerate() {
            *players.add(i) = e.player;
            *games.add(i) = e.game;
            *probabilities.add(i) = p;
        }
        Ok(())
    })
}

/// Ranks the games of `day` with a `GcRankMethod` value. Probabilities come
/// from `model`, or from the dataset's oracle when `model` is null.
///
/// # Safety
/// Handles must come from this library (`model` may be null) and `out` be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gc_rank(
    model: *const GcModel,
    dataset: *const GcDataset,
    day: i64,
    method: u32,
    out: *mut *mut GcRanking,
) -> GcStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        out_ptr(out, "out")?;
        let method = rank_method(method)?;
        let probs: BTreeMap<EdgeKey, f64> = match model.as_ref() {
            Some(m) => predict(&m.checkpoint.params, &ds.graph, day)?,
            None => {
                let oracle = ds.oracle.as_ref().ok_or_else(|| Fail(GcStatus::InvalidArgument, "no model given and the dataset has no oracle".into()))?;
                oracle.day(day).cloned().ok_or(Error::OutOfRange(day))?
            }
        };
        let rg = RelationGraph::from_snapshot(ds.graph.snapshot(day)?, &probs)?;
        let scores = score_games(&rg, method, &PageRankConfig::default(), &HitsConfig::default())?;
        *out = Box::into_raw(Box::new(GcRanking { list: rank_games(&scores) }));
        Ok(())
    })
}

/// Ranking of the games of `day` by realised churn count into `day + 1`.
///
/// # Safety
/// `dataset` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_rank_realized(dataset: *const GcDataset, day: i64, out: *mut *mut GcRanking) -> GcStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        out_ptr(out, "out")?;
        let counts = gamechurn::synth::realized_churn_counts(&ds.graph, day)?;
        let list = rank_games(&counts.into_iter().map(|(g, c)| (g, f64::from(c))).collect());
        *out = Box::into_raw(Box::new(GcRanking { list }));
        Ok(())
    })
}

/// Number of ranked games; 0 for a null handle.
///
/// # Safety
/// `ranking` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gc_ranking_len(ranking: *const GcRanking) -> usize {
    ranking.as_ref().map_or(0, |r| r.list.len())
}

/// Game and score at position `index` (0 is the top).
///
/// # Safety
/// `ranking` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_ranking_get(ranking: *const GcRanking, index: usize, game: *mut u32, score: *mut f64) -> GcStatus {
    guard(|| {
        let r = handle(ranking, "ranking")?;
        out_ptr(game, "game")?;
        out_ptr(score, "score")?;
        let &(g, s) = r
            .list
            .entries()
            .get(index)
            .ok_or_else(|| Fail(GcStatus::OutOfRange, format!("index {index} is past the {} ranked games", r.list.len())))?;
        *game = g;
        *score = s;
        Ok(())
    })
}

/// # Safety
/// `ranking` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gc_ranking_free(ranking: *mut GcRanking) {
    if !ranking.is_null() {
        drop(Box::from_raw(ranking));
    }
}

/// Kendall's tau between two rankings of the same games.
///
/// # Safety
/// Both rankings must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn gc_kendall_tau(pred: *const GcRanking, truth: *const GcRanking, out: *mut f64) -> GcStatus {
    guard(|| {
        let p = handle(pred, "pred")?;
        let t = handle(truth, "truth")?;
        out_ptr(out, "out")?;
        *out = kendall_tau(&p.list, &t.list)?;
        Ok(())
    })
}
