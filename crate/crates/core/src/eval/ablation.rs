//! Compression-strategy ablation harness.
//!
//! Merge decisions are planned once from the raw frames (anchor frozen at
//! the last retained original frame), then every strategy is applied to the
//! identical merge events. That makes slot counts equal across strategies
//! and the reported reconstruction errors directly comparable: each merge
//! event stacks the same (anchor, frame) pair, and the strategies replace
//! that 2xD stack with
//!
//! - `svd`: its rank-k truncation (discarded energy sigma_{k+1..}^2),
//! - `average_pooling`: both rows set to the row mean (energy |a-b|^2 / 2),
//! - `frame_selection`: both rows set to the anchor, i.e. the incoming frame
//!   is dropped (energy |a-b|^2).
//!
//! Retrieval-proxy metrics use a deterministic span predictor over per-slot
//! relevance scores; they exist only to compare strategies against each
//! other, never to reproduce benchmark scores.

use std::str::FromStr;

use serde::Serialize;

use crate::embeddings::{cosine_similarity, EmbeddingVector, FrameRecord, FrameSequence};
use crate::error::{Error, Result};
use crate::eval::{
    mean_average_precision, mean_average_precision_avg, mean_iou, recall_at_k, MomentPrediction,
    TemporalSegment,
};
use crate::svc::{compress_pair, StackedPair, SvcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionStrategy {
    FrameSelection,
    AveragePooling,
    Svd,
}

impl CompressionStrategy {
    pub const ALL: [CompressionStrategy; 3] = [
        CompressionStrategy::FrameSelection,
        CompressionStrategy::AveragePooling,
        CompressionStrategy::Svd,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            CompressionStrategy::FrameSelection => "frame_selection",
            CompressionStrategy::AveragePooling => "average_pooling",
            CompressionStrategy::Svd => "svd",
        }
    }
}

impl FromStr for CompressionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame_selection" => Ok(CompressionStrategy::FrameSelection),
            "average_pooling" => Ok(CompressionStrategy::AveragePooling),
            "svd" => Ok(CompressionStrategy::Svd),
            other => Err(Error::Config(format!(
                "unknown compression strategy {other:?} \
                 (expected frame_selection, average_pooling, or svd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AblationConfig {
    pub svc: SvcConfig,
    /// Ranked predictions emitted per query by the proxy predictor.
    pub top_predictions: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            svc: SvcConfig::default(),
            top_predictions: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub strategy: &'static str,
    pub input_frames: usize,
    pub output_slots: usize,
    pub merge_events: usize,
    /// Frobenius norm of all merge-event residuals against the raw pairs.
    pub reconstruction_error: f64,
    pub r1_at_0_5: f64,
    pub r1_at_0_7: f64,
    pub map_at_0_5: f64,
    pub map_at_0_75: f64,
    pub map_avg: f64,
    pub miou: f64,
}

/// Fixed-column TSV: strategy, input_frames, output_slots, merge_events,
/// reconstruction_error, r1@0.5, r1@0.7, map@0.5, map@0.75, map_avg, miou.
pub fn ablation_table_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "strategy\tinput_frames\toutput_slots\tmerge_events\treconstruction_error\t\
         r1@0.5\tr1@0.7\tmap@0.5\tmap@0.75\tmap_avg\tmiou\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.9e}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            r.strategy,
            r.input_frames,
            r.output_slots,
            r.merge_events,
            r.reconstruction_error,
            r.r1_at_0_5,
            r.r1_at_0_7,
            r.map_at_0_5,
            r.map_at_0_75,
            r.map_avg,
            r.miou,
        ));
    }
    out
}

struct PlanSlot {
    anchor: usize,
    absorbed: Vec<usize>,
}

/// One shared decision walk: the anchor for comparisons stays at the last
/// retained original frame, so the plan is identical for every strategy.
fn plan_walk(seq: &FrameSequence, theta: f64) -> Result<Vec<PlanSlot>> {
    let frames = seq.frames();
    let mut slots = vec![PlanSlot {
        anchor: 0,
        absorbed: Vec::new(),
    }];
    let mut anchor = 0usize;
    for i in 1..frames.len() {
        let sim = cosine_similarity(&frames[anchor].embedding, &frames[i].embedding)?;
        if sim > theta {
            slots.last_mut().expect("non-empty").absorbed.push(i);
        } else {
            slots.push(PlanSlot {
                anchor: i,
                absorbed: Vec::new(),
            });
            anchor = i;
        }
    }
    Ok(slots)
}

fn squared_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn apply_strategy(
    seq: &FrameSequence,
    plan: &[PlanSlot],
    strategy: CompressionStrategy,
    cfg: &SvcConfig,
) -> Result<(Vec<FrameRecord>, f64, usize)> {
    let frames = seq.frames();
    let mut out = Vec::with_capacity(plan.len());
    let mut energy = 0.0f64;
    let mut merge_events = 0usize;
    for slot in plan {
        let anchor = &frames[slot.anchor];
        let mut value = anchor.embedding.clone();
        let mut span = anchor.extent();
        for &bi in &slot.absorbed {
            let b = &frames[bi];
            span = span.union(&b.extent());
            merge_events += 1;
            match strategy {
                CompressionStrategy::Svd => {
                    value = compress_pair(&anchor.embedding, &b.embedding, cfg)?;
                    let stacked = StackedPair::new(anchor.embedding.clone(), b.embedding.clone())?;
                    let (_, discarded) = crate::svc::truncated_svd_rank_k(&stacked, cfg.rank_k)?;
                    energy += discarded;
                }
                CompressionStrategy::AveragePooling => {
                    value = anchor.embedding.add(&b.embedding)?.scale(0.5);
                    energy += squared_distance(&anchor.embedding, &b.embedding) / 2.0;
                }
                CompressionStrategy::FrameSelection => {
                    energy += squared_distance(&anchor.embedding, &b.embedding);
                }
            }
        }
        let mut rec = FrameRecord::new(anchor.frame_index, anchor.timestamp, value)?;
        if !slot.absorbed.is_empty() {
            rec = rec.with_span(span)?;
        } else {
            rec.merged_span = anchor.merged_span;
        }
        out.push(rec);
    }
    Ok((out, energy.sqrt(), merge_events))
}

/// Mean embedding of the raw frames inside the ground-truth span; if none
/// fall inside, the frame nearest the span midpoint stands in.
fn proxy_query_embedding(seq: &FrameSequence, gt: &TemporalSegment) -> Result<EmbeddingVector> {
    let inside: Vec<&FrameRecord> = seq
        .frames()
        .iter()
        .filter(|f| f.timestamp >= gt.start && f.timestamp <= gt.end)
        .collect();
    if inside.is_empty() {
        let mid = 0.5 * (gt.start + gt.end);
        let idx = crate::captions::nearest_frame_index(seq.frames(), mid)
            .ok_or_else(|| Error::EmptyInput("trace has no frames".into()))?;
        return Ok(seq.frames()[idx].embedding.clone());
    }
    let mut acc = inside[0].embedding.clone();
    for f in &inside[1..] {
        acc = acc.add(&f.embedding)?;
    }
    Ok(acc.scale(1.0 / inside.len() as f64))
}

const LENGTH_PRIOR_WEIGHT: f64 = 0.05;

/// Deterministic span predictor: score every contiguous slot run by mean
/// relevance plus a mild log-length prior, then greedily keep the top
/// non-overlapping runs.
fn proxy_predictions(
    slots: &[FrameRecord],
    duration: f64,
    query: &EmbeddingVector,
    top_n: usize,
) -> Result<Vec<MomentPrediction>> {
    let m = slots.len();
    // Slot i covers [bound[i], bound[i+1]); the first slot reaches back to 0.
    let mut bounds = Vec::with_capacity(m + 1);
    bounds.push(0.0);
    for s in &slots[1..] {
        bounds.push(s.extent().start_sec);
    }
    bounds.push(duration);

    let mut relevance = Vec::with_capacity(m);
    for s in slots {
        let r = if s.embedding.is_zero() {
            -1.0
        } else {
            cosine_similarity(&s.embedding, query)?
        };
        relevance.push(r);
    }

    let mut scored: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..m {
        let mut sum = 0.0;
        for j in i..m {
            sum += relevance[j];
            let mean = sum / (j - i + 1) as f64;
            let len = bounds[j + 1] - bounds[i];
            let score = mean + LENGTH_PRIOR_WEIGHT * (1.0 + len).ln();
            scored.push((score, i, j));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut picked: Vec<(usize, usize)> = Vec::new();
    let mut preds = Vec::new();
    for (score, i, j) in scored {
        if preds.len() == top_n {
            break;
        }
        if picked.iter().any(|(pi, pj)| i <= *pj && *pi <= j) {
            continue;
        }
        picked.push((i, j));
        preds.push(MomentPrediction {
            segment: TemporalSegment::new(bounds[i], bounds[j + 1])?,
            confidence: score,
        });
    }
    Ok(preds)
}

/// Compare compression strategies on one trace against one or more
/// ground-truth moments (each ground truth is treated as its own query).
pub fn run_ablation(
    trace: &FrameSequence,
    gts: &[TemporalSegment],
    strategies: &[CompressionStrategy],
    cfg: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    if trace.is_empty() {
        return Err(Error::EmptyInput("cannot ablate an empty trace".into()));
    }
    if gts.is_empty() {
        return Err(Error::EmptyInput("no ground-truth moments supplied".into()));
    }
    if strategies.is_empty() {
        return Err(Error::EmptyInput("no strategies requested".into()));
    }
    for f in trace.frames() {
        if f.embedding.is_zero() {
            return Err(Error::DegenerateInput(format!(
                "frame {} has a zero embedding",
                f.frame_index
            )));
        }
    }

    let plan = plan_walk(trace, cfg.svc.theta)?;
    let queries: Vec<EmbeddingVector> = gts
        .iter()
        .map(|g| proxy_query_embedding(trace, g))
        .collect::<Result<_>>()?;
    let gts_per_query: Vec<Vec<TemporalSegment>> = gts.iter().map(|g| vec![*g]).collect();

    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let (slots, error, merge_events) = apply_strategy(trace, &plan, *strategy, &cfg.svc)?;
        let mut preds_per_query = Vec::with_capacity(queries.len());
        for q in &queries {
            preds_per_query.push(proxy_predictions(
                &slots,
                trace.duration(),
                q,
                cfg.top_predictions,
            )?);
        }
        rows.push(AblationRow {
            strategy: strategy.label(),
            input_frames: trace.len(),
            output_slots: slots.len(),
            merge_events,
            reconstruction_error: error,
            r1_at_0_5: recall_at_k(&preds_per_query, &gts_per_query, 1, 0.5)?,
            r1_at_0_7: recall_at_k(&preds_per_query, &gts_per_query, 1, 0.7)?,
            map_at_0_5: mean_average_precision(&preds_per_query, &gts_per_query, 0.5)?,
            map_at_0_75: mean_average_precision(&preds_per_query, &gts_per_query, 0.75)?,
            map_avg: mean_average_precision_avg(&preds_per_query, &gts_per_query)?,
            miou: mean_iou(&preds_per_query, &gts_per_query)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::FrameSequence;
    use crate::synth::{generate, SynthConfig};

    fn row_for<'a>(rows: &'a [AblationRow], strategy: &str) -> &'a AblationRow {
        rows.iter().find(|r| r.strategy == strategy).unwrap()
    }

    fn run_all(trace: &FrameSequence) -> Vec<AblationRow> {
        let gts = vec![TemporalSegment::new(0.0, (trace.duration() / 2.0).max(1.0)).unwrap()];
        run_ablation(
            trace,
            &gts,
            &CompressionStrategy::ALL,
            &AblationConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn identical_frames_give_zero_error_for_every_strategy() {
        let trace = generate(&SynthConfig {
            n_frames: 8,
            dimension: 4,
            plateaus: 1,
            noise: 0.0,
            seed: 5,
        })
        .unwrap();
        let rows = run_all(&trace.sequence);
        for r in &rows {
            assert_eq!(r.output_slots, 1);
            assert!(r.reconstruction_error.abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn strategies_share_slot_counts_and_svd_wins_on_error() {
        for seed in 0..40u64 {
            let trace = generate(&SynthConfig {
                n_frames: 20,
                dimension: 12,
                plateaus: 1 + seed as usize % 4,
                noise: 0.03,
                seed,
            })
            .unwrap();
            let rows = run_all(&trace.sequence);
            let svd = row_for(&rows, "svd");
            let avg = row_for(&rows, "average_pooling");
            let sel = row_for(&rows, "frame_selection");
            assert_eq!(svd.output_slots, avg.output_slots);
            assert_eq!(svd.output_slots, sel.output_slots);
            assert!(
                svd.reconstruction_error <= avg.reconstruction_error + 1e-9,
                "seed {seed}: svd {} vs avg {}",
                svd.reconstruction_error,
                avg.reconstruction_error
            );
            assert!(
                avg.reconstruction_error <= sel.reconstruction_error + 1e-9,
                "seed {seed}"
            );
            if svd.merge_events > 0 {
                // Noisy plateaus: absorbed frames differ from their anchors,
                // so dropping them must cost strictly more than the rank-1 fold.
                assert!(
                    sel.reconstruction_error > svd.reconstruction_error,
                    "seed {seed}"
                );
            }
        }
    }

    #[test]
    fn error_ordering_holds_on_a_thousand_seeded_traces() {
        let gts = vec![TemporalSegment::new(0.0, 4.0).unwrap()];
        for seed in 0..1000u64 {
            let trace = generate(&SynthConfig {
                n_frames: 10,
                dimension: 6,
                plateaus: 1 + seed as usize % 3,
                noise: 0.04,
                seed,
            })
            .unwrap();
            let rows = run_ablation(
                &trace.sequence,
                &gts,
                &CompressionStrategy::ALL,
                &AblationConfig::default(),
            )
            .unwrap();
            let svd = row_for(&rows, "svd").reconstruction_error;
            let avg = row_for(&rows, "average_pooling").reconstruction_error;
            let sel = row_for(&rows, "frame_selection").reconstruction_error;
            assert!(svd <= avg + 1e-9, "seed {seed}: {svd} vs {avg}");
            assert!(avg <= sel + 1e-9, "seed {seed}: {avg} vs {sel}");
        }
    }

    #[test]
    fn frame_selection_strictly_worse_on_noisy_plateau() {
        let trace = generate(&SynthConfig {
            n_frames: 12,
            dimension: 8,
            plateaus: 2,
            noise: 0.02,
            seed: 17,
        })
        .unwrap();
        let rows = run_all(&trace.sequence);
        let svd = row_for(&rows, "svd");
        let sel = row_for(&rows, "frame_selection");
        assert!(svd.merge_events > 0);
        assert!(sel.reconstruction_error > svd.reconstruction_error);
    }

    #[test]
    fn unknown_strategy_is_a_config_error() {
        let err = "principal_pooling".parse::<CompressionStrategy>();
        assert!(matches!(err, Err(Error::Config(_))));
        assert_eq!(
            "svd".parse::<CompressionStrategy>().unwrap(),
            CompressionStrategy::Svd
        );
    }

    #[test]
    fn table_is_deterministic_and_fixed_order() {
        let trace = generate(&SynthConfig {
            n_frames: 10,
            dimension: 6,
            plateaus: 2,
            noise: 0.01,
            seed: 3,
        })
        .unwrap();
        let a = ablation_table_tsv(&run_all(&trace.sequence));
        let b = ablation_table_tsv(&run_all(&trace.sequence));
        assert_eq!(a, b);
        let header = a.lines().next().unwrap();
        assert!(header.starts_with("strategy\tinput_frames\toutput_slots"));
        assert_eq!(a.lines().count(), 4);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let trace = generate(&SynthConfig {
            n_frames: 4,
            dimension: 4,
            plateaus: 1,
            noise: 0.0,
            seed: 0,
        })
        .unwrap();
        let gts = vec![TemporalSegment::new(0.0, 2.0).unwrap()];
        assert!(run_ablation(
            &trace.sequence,
            &[],
            &CompressionStrategy::ALL,
            &AblationConfig::default()
        )
        .is_err());
        assert!(run_ablation(&trace.sequence, &gts, &[], &AblationConfig::default()).is_err());
    }
}
