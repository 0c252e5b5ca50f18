//! Event-level scoring: IoU, UNK exclusion, maximum bipartite matching and
//! precision/recall/F-score, per recording and pooled.

use std::collections::BTreeMap;
use std::path::Path;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{parse_annotations, AnnotationRow};
use crate::error::{Error, Result};

/// Default IoU needed for a prediction to match a ground-truth event.
pub const DEFAULT_MIN_IOU: f64 = 0.3;

/// IoU values are compared as integers at this resolution.
const IOU_SCALE: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::Domain(format!("interval needs start < end, got [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

pub fn iou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.overlap(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.len() + b.len() - inter)
}

/// Drops predictions with positive-length overlap with any UNK interval.
pub fn remove_unk(preds: &[Interval], unk: &[Interval]) -> Vec<Interval> {
    preds
        .iter()
        .filter(|p| unk.iter().all(|u| p.overlap(u) <= 0.0))
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(prediction index, ground-truth index)`, sorted by prediction.
    pub pairs: Vec<(usize, usize)>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

struct Components {
    parent: Vec<usize>,
}

impl Components {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Maximum-cardinality matching over pairs with IoU at least `min_iou`,
/// maximizing total IoU among those. Ties go to whichever optimum the
/// solver reaches first, which depends only on input order.
pub fn match_events(preds: &[Interval], gts: &[Interval], min_iou: f64) -> MatchResult {
    let (n, m) = (preds.len(), gts.len());
    let mut edges = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let v = iou(p, g);
            if v > 0.0 && v >= min_iou {
                edges.push((i, j, v));
            }
        }
    }
    // nodes 0..n are predictions, n..n+m ground truths
    let mut comps = Components {
        parent: (0..n + m).collect(),
    };
    for &(i, j, _) in &edges {
        comps.union(i, n + j);
    }
    let mut groups: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for &e in &edges {
        groups.entry(comps.find(e.0)).or_default().push(e);
    }

    let mut pairs = Vec::new();
    for group in groups.values() {
        let mut rows: Vec<usize> = group.iter().map(|e| e.0).collect();
        let mut cols: Vec<usize> = group.iter().map(|e| e.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        if rows.len() == 1 || cols.len() == 1 {
            // a star: the single best edge, first on ties
            let best = group
                .iter()
                .fold(None::<&(usize, usize, f64)>, |acc, e| match acc {
                    Some(a) if a.2 >= e.2 => Some(a),
                    _ => Some(e),
                })
                .expect("nonempty group");
            pairs.push((best.0, best.1));
            continue;
        }
        let transpose = rows.len() > cols.len();
        let (r, c) = if transpose { (&cols, &rows) } else { (&rows, &cols) };
        let big = (r.len() as i64 + 1) * IOU_SCALE as i64;
        let mut w = Matrix::new(r.len(), c.len(), 0i64);
        for &(i, j, v) in group {
            let (a, b) = if transpose { (j, i) } else { (i, j) };
            let ra = r.binary_search(&a).expect("row present");
            let cb = c.binary_search(&b).expect("column present");
            w[(ra, cb)] = big + (v * IOU_SCALE).round() as i64;
        }
        let (_, assign) = kuhn_munkres(&w);
        for (ra, &cb) in assign.iter().enumerate() {
            if w[(ra, cb)] > 0 {
                let (a, b) = (r[ra], c[cb]);
                pairs.push(if transpose { (b, a) } else { (a, b) });
            }
        }
    }
    pairs.sort_unstable();
    let tp = pairs.len();
    MatchResult {
        pairs,
        tp,
        fp: n - tp,
        fn_: m - tp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let fscore = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        precision,
        recall,
        fscore,
    }
}

/// Counts and metrics for one recording or the pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let m = compute_metrics(tp, fp, fn_);
        Self {
            tp,
            fp,
            fn_,
            precision: m.precision,
            recall: m.recall,
            fscore: m.fscore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_file: BTreeMap<String, Score>,
    pub pooled: Score,
}

impl ScoreReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct")
    }
}

/// Ground truth of one recording.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub events: Vec<Interval>,
    pub unknown: Vec<Interval>,
}

/// Groups annotation rows by recording into POS events and UNK regions,
/// each sorted by start time.
pub fn ground_truth_from_rows(rows: &[AnnotationRow]) -> Result<BTreeMap<String, GroundTruth>> {
    let mut out: BTreeMap<String, GroundTruth> = BTreeMap::new();
    for r in rows {
        let gt = out.entry(r.audiofile.clone()).or_default();
        let iv = Interval::new(r.start, r.end)?;
        if r.is_positive() {
            gt.events.push(iv);
        } else if r.is_unknown() {
            gt.unknown.push(iv);
        }
    }
    for gt in out.values_mut() {
        gt.events.sort_by(|a, b| a.start.total_cmp(&b.start));
        gt.unknown.sort_by(|a, b| a.start.total_cmp(&b.start));
    }
    Ok(out)
}

/// Parses a prediction CSV (`Audiofilename,Starttime,Endtime`), grouped by
/// recording in file order.
pub fn parse_predictions(csv_text: &str) -> Result<BTreeMap<String, Vec<Interval>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(1, format!("missing column {name}")))
    };
    let (fc, sc, ec) = (col("Audiofilename")?, col("Starttime")?, col("Endtime")?);
    let mut out: BTreeMap<String, Vec<Interval>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let field = |c: usize| rec.get(c).ok_or_else(|| Error::parse(line, "short row"));
        let num = |c: usize| -> Result<f64> {
            let s = field(c)?;
            s.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("not a number: {s:?}")))
        };
        let iv = Interval::new(num(sc)?, num(ec)?).map_err(|e| Error::parse(line, e.to_string()))?;
        out.entry(field(fc)?.to_string()).or_default().push(iv);
    }
    Ok(out)
}

/// Scores every ground-truth recording, pooling counts across them.
/// The first `skip_shots` events of each recording are the detector's
/// support and are left out of matching.
pub fn score(
    preds: &BTreeMap<String, Vec<Interval>>,
    truth: &BTreeMap<String, GroundTruth>,
    min_iou: f64,
    skip_shots: usize,
) -> Result<ScoreReport> {
    if let Some(name) = preds.keys().find(|k| !truth.contains_key(*k)) {
        return Err(Error::Domain(format!("recording {name} has predictions but no ground truth")));
    }
    let empty = Vec::new();
    let mut per_file = BTreeMap::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (name, gt) in truth {
        let kept = remove_unk(preds.get(name).unwrap_or(&empty), &gt.unknown);
        let events = &gt.events[skip_shots.min(gt.events.len())..];
        let m = match_events(&kept, events, min_iou);
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        per_file.insert(name.clone(), Score::from_counts(m.tp, m.fp, m.fn_));
    }
    Ok(ScoreReport {
        per_file,
        pooled: Score::from_counts(tp, fp, fn_),
    })
}

/// Reads both CSVs and scores them.
pub fn score_file(
    pred_csv: impl AsRef<Path>,
    gt_csv: impl AsRef<Path>,
    min_iou: f64,
    skip_shots: usize,
) -> Result<ScoreReport> {
    let pred_path = pred_csv.as_ref();
    let text = std::fs::read_to_string(pred_path).map_err(|e| Error::io(pred_path, e))?;
    let preds = parse_predictions(&text).map_err(|e| in_file(pred_path, e))?;
    let gt_path = gt_csv.as_ref();
    let text = std::fs::read_to_string(gt_path).map_err(|e| Error::io(gt_path, e))?;
    let rows = parse_annotations(&text).map_err(|e| in_file(gt_path, e))?;
    score(&preds, &ground_truth_from_rows(&rows)?, min_iou, skip_shots)
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, reason } => Error::Format {
            path: path.into(),
            reason: format!("line {line}: {reason}"),
        },
        other => other,
    }
}

/// Every matching of a small instance, searched exhaustively: the largest
/// cardinality and the best total IoU at that cardinality.
pub fn brute_force_matching(preds: &[Interval], gts: &[Interval], min_iou: f64) -> (usize, f64) {
    fn go(i: usize, used: &mut Vec<bool>, w: &[Vec<Option<f64>>], best: &mut (usize, f64), card: usize, total: f64) {
        if i == w.len() {
            if card > best.0 || (card == best.0 && total > best.1) {
                *best = (card, total);
            }
            return;
        }
        go(i + 1, used, w, best, card, total);
        for j in 0..used.len() {
            if let (false, Some(v)) = (used[j], w[i][j]) {
                used[j] = true;
                go(i + 1, used, w, best, card + 1, total + v);
                used[j] = false;
            }
        }
    }
    let w: Vec<Vec<Option<f64>>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| {
                    let v = iou(p, g);
                    (v > 0.0 && v >= min_iou).then_some(v)
                })
                .collect()
        })
        .collect();
    let mut best = (0, 0.0);
    go(0, &mut vec![false; gts.len()], &w, &mut best, 0, 0.0);
    best
}
