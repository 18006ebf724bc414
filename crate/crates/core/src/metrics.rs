//! Classification metrics for edge predictions and rank metrics for game lists.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::RankedList;

/// Ranks 1..n with tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Area under the ROC curve of `(score, is_positive)` pairs, ties counting one half.
pub fn auc(scored: &[(f64, bool)]) -> Result<f64> {
    if scored.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Data("non-finite score".into()));
    }
    let pos = scored.iter().filter(|(_, l)| *l).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes"));
    }
    let scores: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    let ranks = average_ranks(&scores);
    let rank_sum: f64 = ranks.iter().zip(scored).filter(|(_, (_, l))| *l).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Precision and recall; `None` where the denominator is empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionRecall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Predicts positive when `score >= threshold`.
pub fn precision_recall(scored: &[(f64, bool)], threshold: f64) -> PrecisionRecall {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(s, l) in scored {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    PrecisionRecall { precision: ratio(tp, tp + fp), recall: ratio(tp, tp + fn_) }
}

/// Position of every item of `truth` in both lists; errors unless the item sets match.
fn aligned_positions(pred: &RankedList, truth: &RankedList) -> Result<(Vec<usize>, Vec<usize>)> {
    let pred_pos: BTreeMap<u32, usize> = pred.order().into_iter().enumerate().map(|(i, g)| (g, i)).collect();
    let truth_order = truth.order();
    if pred_pos.len() != pred.len() || truth_order.len() != pred.len() {
        return Err(Error::Data("ranked lists differ in length or repeat items".into()));
    }
    let mut p = Vec::with_capacity(truth_order.len());
    let mut seen = vec![false; truth_order.len()];
    for g in &truth_order {
        let &i = pred_pos.get(g).ok_or_else(|| Error::Data(format!("game {g} is missing from the predicted list")))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::Data(format!("game {g} repeats in the truth list")));
        }
        p.push(i);
    }
    Ok((p, (0..truth_order.len()).collect()))
}

/// Counts pairs ordered differently by `seq` (merge-sort inversion count).
fn inversions(seq: &mut [usize]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = inversions(&mut seq[..mid]) + inversions(&mut seq[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if seq[i] <= seq[j] {
            merged.push(seq[i]);
            i += 1;
        } else {
            merged.push(seq[j]);
            count += (mid - i) as u64;
            j += 1;
        }
    }
    merged.extend_from_slice(&seq[i..mid]);
    merged.extend_from_slice(&seq[j..n]);
    seq.copy_from_slice(&merged);
    count
}

/// `(P - Q) / (n (n - 1) / 2)` over all item pairs.
pub fn kendall_tau(pred: &RankedList, truth: &RankedList) -> Result<f64> {
    let (mut p, _) = aligned_positions(pred, truth)?;
    let n = p.len() as u64;
    if n < 2 {
        return Err(Error::UndefinedMetric("kendall tau needs at least two items"));
    }
    let pairs = n * (n - 1) / 2;
    let discordant = inversions(&mut p);
    Ok((pairs as f64 - 2.0 * discordant as f64) / pairs as f64)
}

/// Fenwick tree over positions for prefix counts.
struct Fenwick(Vec<u32>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted positions below `i`.
    fn below(&self, i: usize) -> u32 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Weighted tau with pair weight `1/(r_a+1) + 1/(r_b+1)`, ranks taken from
/// `ranks`, normalised by the total weight.
fn weighted_tau_by(pred_pos: &[usize], truth_pos: &[usize], ranks: &[usize]) -> f64 {
    let n = pred_pos.len();
    // order items by predicted position, then count earlier items also earlier in truth
    let mut by_pred: Vec<usize> = (0..n).collect();
    by_pred.sort_by_key(|&k| pred_pos[k]);
    let mut tree = Fenwick::new(n);
    let mut num = 0.0;
    let mut weight_sum = 0.0;
    for &k in &by_pred {
        let both_before = tree.below(truth_pos[k]) as i64;
        tree.add(truth_pos[k]);
        let (pp, pt) = (pred_pos[k] as i64, truth_pos[k] as i64);
        // concordant minus discordant partners of item k
        let net = 4 * both_before + n as i64 - 1 - 2 * pp - 2 * pt;
        let w = 1.0 / (ranks[k] as f64 + 1.0);
        num += w * net as f64;
        weight_sum += w;
    }
    num / ((n - 1) as f64 * weight_sum)
}

/// Hyperbolically weighted tau, averaged over ranks from each list.
pub fn weighted_kendall_tau(pred: &RankedList, truth: &RankedList) -> Result<f64> {
    let (p, t) = aligned_positions(pred, truth)?;
    if p.len() < 2 {
        return Err(Error::UndefinedMetric("weighted tau needs at least two items"));
    }
    Ok(0.5 * (weighted_tau_by(&p, &t, &t) + weighted_tau_by(&p, &t, &p)))
}

/// Pearson correlation of two equal-length samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data("pearson needs two samples of equal length ≥ 2".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant sample"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Spearman correlation of two rankings of the same items.
pub fn spearman(pred: &RankedList, truth: &RankedList) -> Result<f64> {
    let (p, t) = aligned_positions(pred, truth)?;
    let n = p.len();
    if n < 2 {
        return Err(Error::UndefinedMetric("spearman needs at least two items"));
    }
    let d2: u64 = p.iter().zip(&t).map(|(a, b)| (a.abs_diff(*b) as u64).pow(2)).sum();
    let n = n as f64;
    Ok(1.0 - 6.0 * d2 as f64 / (n * (n * n - 1.0)))
}

/// Spearman correlation of raw scores, ties sharing average ranks.
pub fn spearman_scores(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// `rel[i]`: the item at position `i` is among the truth list's top `i + 1`.
fn relevance(pred: &RankedList, truth: &RankedList, k: usize) -> Result<Vec<bool>> {
    aligned_positions(pred, truth)?;
    if k == 0 || k > pred.len() {
        return Err(Error::Data(format!("K = {k} is outside 1..={}", pred.len())));
    }
    let truth_pos: BTreeMap<u32, usize> = truth.order().into_iter().enumerate().map(|(i, g)| (g, i)).collect();
    Ok(pred.order().iter().take(k).enumerate().map(|(i, g)| truth_pos[g] <= i).collect())
}

/// Mean over `i = 1..=K` of the precision at `i`.
pub fn avg_precision_at_k(pred: &RankedList, truth: &RankedList, k: usize) -> Result<f64> {
    let rel = relevance(pred, truth, k)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, r) in rel.iter().enumerate() {
        hits += usize::from(*r);
        total += hits as f64 / (i + 1) as f64;
    }
    Ok(total / k as f64)
}

/// Precision at each relevant position, averaged over relevant positions
/// within the top `K`; 0 when nothing is relevant.
pub fn average_precision(pred: &RankedList, truth: &RankedList, k: usize) -> Result<f64> {
    let rel = relevance(pred, truth, k)?;
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, r) in rel.iter().enumerate() {
        if *r {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(if hits == 0 { 0.0 } else { total / hits as f64 })
}

/// Mean of per-day average precisions.
pub fn mean_average_precision(per_day_ap: &[f64]) -> Result<f64> {
    if per_day_ap.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(per_day_ap.iter().sum::<f64>() / per_day_ap.len() as f64)
}

/// One line of a metrics report; `day` is absent for averages over days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub day: Option<i64>,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_report(path: &Path, records: &[MetricRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<MetricRecord>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse(path, e)))
        .collect()
}
