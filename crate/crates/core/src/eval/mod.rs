//! Moment-retrieval evaluation: temporal IoU, Recall@K at IoU thresholds,
//! mean average precision, and mean IoU. Queries may carry several disjoint
//! ground-truth segments; each ground truth is matchable at most once per
//! ranked prediction list. Per-query results are averaged with compensated
//! summation so the reduction order cannot disturb the totals.

pub mod ablation;

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::fmt_f64;

/// Threshold grid behind the reported "average mAP": 0.5 to 0.95 in steps
/// of 0.05.
pub const MAP_AVG_GRID: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalSegment {
    pub start: f64,
    pub end: f64,
}

impl TemporalSegment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(Error::NonFinite("segment bound".into()));
        }
        if start < 0.0 || start >= end {
            return Err(Error::Ordering(format!(
                "segment requires 0 <= start < end, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPrediction {
    pub segment: TemporalSegment,
    pub confidence: f64,
}

/// Intersection over union of two intervals; 0 when disjoint (touching
/// endpoints count as disjoint: the intersection has zero length).
pub fn temporal_iou(a: &TemporalSegment, b: &TemporalSegment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.length() + b.length() - inter;
    inter / union
}

/// Kahan compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    fn add(&mut self, value: f64) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// Confidence-descending rank order; ties break to the earlier start, then
/// the earlier end.
fn ranked(preds: &[MomentPrediction]) -> Vec<&MomentPrediction> {
    let mut out: Vec<&MomentPrediction> = preds.iter().collect();
    out.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.segment.start.total_cmp(&b.segment.start))
            .then(a.segment.end.total_cmp(&b.segment.end))
    });
    out
}

fn check_queries(
    preds_per_query: &[Vec<MomentPrediction>],
    gts: &[Vec<TemporalSegment>],
) -> Result<()> {
    if gts.is_empty() {
        return Err(Error::EmptyInput("no queries to evaluate".into()));
    }
    if preds_per_query.len() != gts.len() {
        return Err(Error::DimensionMismatch {
            left: preds_per_query.len(),
            right: gts.len(),
        });
    }
    if let Some(i) = gts.iter().position(|g| g.is_empty()) {
        return Err(Error::EmptyInput(format!("query {i} has no ground truth")));
    }
    Ok(())
}

/// Percentage of queries where one of the top-k predictions reaches the IoU
/// threshold against some ground truth.
pub fn recall_at_k(
    preds_per_query: &[Vec<MomentPrediction>],
    gts: &[Vec<TemporalSegment>],
    k: usize,
    threshold: f64,
) -> Result<f64> {
    check_queries(preds_per_query, gts)?;
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut hits = KahanSum::default();
    for (preds, gt) in preds_per_query.iter().zip(gts) {
        let hit = ranked(preds)
            .iter()
            .take(k)
            .any(|p| gt.iter().any(|g| temporal_iou(&p.segment, g) >= threshold));
        hits.add(if hit { 1.0 } else { 0.0 });
    }
    Ok(100.0 * hits.value() / gts.len() as f64)
}

/// Average precision of one ranked prediction list. Walking predictions by
/// rank, each prediction matches the still-unmatched ground truth of highest
/// IoU when that IoU reaches the threshold (ties: earlier ground truth);
/// AP is the sum of precisions at true-positive ranks over the ground-truth
/// count.
fn average_precision(preds: &[MomentPrediction], gts: &[TemporalSegment], threshold: f64) -> f64 {
    let mut matched = vec![false; gts.len()];
    let mut true_positives = 0usize;
    let mut ap = KahanSum::default();
    for (rank, pred) in ranked(preds).iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in gts.iter().enumerate() {
            if matched[i] {
                continue;
            }
            let iou = temporal_iou(&pred.segment, g);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        if let Some((i, _)) = best {
            matched[i] = true;
            true_positives += 1;
            ap.add(true_positives as f64 / (rank + 1) as f64);
        }
    }
    ap.value() / gts.len() as f64
}

/// Mean over queries of average precision at one IoU threshold, as a
/// percentage.
pub fn mean_average_precision(
    preds_per_query: &[Vec<MomentPrediction>],
    gts: &[Vec<TemporalSegment>],
    threshold: f64,
) -> Result<f64> {
    check_queries(preds_per_query, gts)?;
    let mut total = KahanSum::default();
    for (preds, gt) in preds_per_query.iter().zip(gts) {
        total.add(average_precision(preds, gt, threshold));
    }
    Ok(100.0 * total.value() / gts.len() as f64)
}

/// Mean of mAP over the standard 0.5:0.05:0.95 grid.
pub fn mean_average_precision_avg(
    preds_per_query: &[Vec<MomentPrediction>],
    gts: &[Vec<TemporalSegment>],
) -> Result<f64> {
    let mut total = KahanSum::default();
    for thr in MAP_AVG_GRID {
        total.add(mean_average_precision(preds_per_query, gts, thr)?);
    }
    Ok(total.value() / MAP_AVG_GRID.len() as f64)
}

/// Mean over queries of the top-1 prediction's IoU (best ground truth), as a
/// percentage. Every query must have at least one prediction.
pub fn mean_iou(
    preds_per_query: &[Vec<MomentPrediction>],
    gts: &[Vec<TemporalSegment>],
) -> Result<f64> {
    check_queries(preds_per_query, gts)?;
    let mut total = KahanSum::default();
    for (i, (preds, gt)) in preds_per_query.iter().zip(gts).enumerate() {
        let top = ranked(preds)
            .first()
            .copied()
            .ok_or_else(|| Error::EmptyInput(format!("query {i} has no predictions")))?;
        let best = gt
            .iter()
            .map(|g| temporal_iou(&top.segment, g))
            .fold(0.0f64, f64::max);
        total.add(best);
    }
    Ok(100.0 * total.value() / gts.len() as f64)
}

/// All headline numbers in one bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub r1_at: Vec<(f64, f64)>,
    pub map_at: Vec<(f64, f64)>,
    pub map_avg: f64,
    pub miou: f64,
}

pub fn evaluate(
    preds_per_query: &[Vec<MomentPrediction>],
    gts: &[Vec<TemporalSegment>],
    r1_thresholds: &[f64],
    map_thresholds: &[f64],
) -> Result<EvalResult> {
    let mut r1_at = Vec::with_capacity(r1_thresholds.len());
    for thr in r1_thresholds {
        r1_at.push((*thr, recall_at_k(preds_per_query, gts, 1, *thr)?));
    }
    let mut map_at = Vec::with_capacity(map_thresholds.len());
    for thr in map_thresholds {
        map_at.push((*thr, mean_average_precision(preds_per_query, gts, *thr)?));
    }
    Ok(EvalResult {
        r1_at,
        map_at,
        map_avg: mean_average_precision_avg(preds_per_query, gts)?,
        miou: mean_iou(preds_per_query, gts)?,
    })
}

impl EvalResult {
    /// Tab-separated `metric\tvalue` lines, four decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (thr, v) in &self.r1_at {
            out.push_str(&format!("r1@{thr}\t{v:.4}\n"));
        }
        for (thr, v) in &self.map_at {
            out.push_str(&format!("map@{thr}\t{v:.4}\n"));
        }
        out.push_str(&format!("map_avg\t{:.4}\n", self.map_avg));
        out.push_str(&format!("miou\t{:.4}\n", self.miou));
        out
    }
}

// ---------------------------------------------------------------------------
// Ground-truth and prediction files
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct EvalLine {
    query_id: String,
    start: f64,
    end: f64,
    #[serde(default)]
    confidence: Option<f64>,
}

/// Queries in ground-truth file order, with grouped ground truths and
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDataset {
    pub query_ids: Vec<String>,
    pub gts: Vec<Vec<TemporalSegment>>,
    pub preds: Vec<Vec<MomentPrediction>>,
}

fn read_lines<R: Read>(reader: R, what: &str) -> Result<Vec<EvalLine>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{what} line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Load ground truth and predictions, grouping by query id. Every ground
/// truth query must have at least one prediction and predictions must not
/// reference unknown queries.
pub fn load_eval_data<R1: Read, R2: Read>(gt_reader: R1, pred_reader: R2) -> Result<EvalDataset> {
    let gt_lines = read_lines(gt_reader, "ground truth")?;
    if gt_lines.is_empty() {
        return Err(Error::EmptyInput("ground-truth file has no records".into()));
    }
    let mut query_ids: Vec<String> = Vec::new();
    let mut gts: Vec<Vec<TemporalSegment>> = Vec::new();
    for line in &gt_lines {
        let seg = TemporalSegment::new(line.start, line.end)?;
        match query_ids.iter().position(|q| q == &line.query_id) {
            Some(i) => gts[i].push(seg),
            None => {
                query_ids.push(line.query_id.clone());
                gts.push(vec![seg]);
            }
        }
    }

    let pred_lines = read_lines(pred_reader, "predictions")?;
    if pred_lines.is_empty() {
        return Err(Error::EmptyInput("prediction file has no records".into()));
    }
    let mut preds: Vec<Vec<MomentPrediction>> = vec![Vec::new(); query_ids.len()];
    for line in &pred_lines {
        let i = query_ids
            .iter()
            .position(|q| q == &line.query_id)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "prediction references unknown query id {:?}",
                    line.query_id
                ))
            })?;
        preds[i].push(MomentPrediction {
            segment: TemporalSegment::new(line.start, line.end)?,
            confidence: line.confidence.unwrap_or(0.0),
        });
    }
    if let Some(i) = preds.iter().position(|p| p.is_empty()) {
        return Err(Error::EmptyInput(format!(
            "query {:?} has no predictions",
            query_ids[i]
        )));
    }
    Ok(EvalDataset {
        query_ids,
        gts,
        preds,
    })
}

pub fn load_eval_files<P: AsRef<Path>>(gt_path: P, pred_path: P) -> Result<EvalDataset> {
    let gt = fs::File::open(gt_path)?;
    let pred = fs::File::open(pred_path)?;
    load_eval_data(gt, pred)
}

/// Plain segment list from a ground-truth file, ignoring query ids.
pub fn load_segments<R: Read>(reader: R) -> Result<Vec<TemporalSegment>> {
    let lines = read_lines(reader, "segments")?;
    if lines.is_empty() {
        return Err(Error::EmptyInput("segment file has no records".into()));
    }
    lines
        .iter()
        .map(|l| TemporalSegment::new(l.start, l.end))
        .collect()
}

pub fn load_segments_file<P: AsRef<Path>>(path: P) -> Result<Vec<TemporalSegment>> {
    let file = fs::File::open(path)?;
    load_segments(file)
}

/// Canonical prediction writer (used by tests and fixtures).
pub fn write_predictions<W: Write>(
    mut writer: W,
    entries: &[(String, MomentPrediction)],
) -> Result<()> {
    for (query_id, p) in entries {
        writeln!(
            writer,
            "{{\"query_id\":{},\"start\":{},\"end\":{},\"confidence\":{}}}",
            serde_json::to_string(query_id).expect("string"),
            fmt_f64(p.segment.start),
            fmt_f64(p.segment.end),
            fmt_f64(p.confidence),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
