use super::*;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn seg(start: f64, end: f64) -> TemporalSegment {
    TemporalSegment::new(start, end).unwrap()
}

fn pred(start: f64, end: f64, confidence: f64) -> MomentPrediction {
    MomentPrediction {
        segment: seg(start, end),
        confidence,
    }
}

// -- temporal_iou ---------------------------------------------------------------

#[test]
fn iou_identity_is_one() {
    assert_eq!(temporal_iou(&seg(0.0, 10.0), &seg(0.0, 10.0)), 1.0);
}

#[test]
fn iou_partial_overlap_analytic() {
    let v = temporal_iou(&seg(0.0, 10.0), &seg(5.0, 15.0));
    assert!((v - 5.0 / 15.0).abs() < 1e-12);
}

#[test]
fn iou_touching_endpoints_is_zero() {
    assert_eq!(temporal_iou(&seg(0.0, 5.0), &seg(5.0, 10.0)), 0.0);
}

#[test]
fn iou_symmetric_and_translation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let a0: f64 = rng.gen_range(0.0..50.0);
        let a = seg(a0, a0 + rng.gen_range(0.1..20.0));
        let b0: f64 = rng.gen_range(0.0..50.0);
        let b = seg(b0, b0 + rng.gen_range(0.1..20.0));
        assert_eq!(temporal_iou(&a, &b), temporal_iou(&b, &a));
        let shift = rng.gen_range(0.0..30.0);
        let at = seg(a.start + shift, a.end + shift);
        let bt = seg(b.start + shift, b.end + shift);
        assert!((temporal_iou(&a, &b) - temporal_iou(&at, &bt)).abs() < 1e-9);
    }
}

#[test]
fn invalid_segments_rejected() {
    assert!(TemporalSegment::new(-1.0, 2.0).is_err());
    assert!(TemporalSegment::new(3.0, 3.0).is_err());
    assert!(TemporalSegment::new(5.0, 2.0).is_err());
}

// -- recall ----------------------------------------------------------------------

#[test]
fn recall_half_on_two_queries() {
    let gts = vec![vec![seg(0.0, 10.0)], vec![seg(20.0, 30.0)]];
    let preds = vec![
        vec![pred(0.0, 10.0, 0.9)],  // exact match
        vec![pred(40.0, 50.0, 0.9)], // disjoint
    ];
    assert_eq!(recall_at_k(&preds, &gts, 1, 0.5).unwrap(), 50.0);
}

#[test]
fn recall_all_exact_is_hundred() {
    let gts = vec![vec![seg(0.0, 5.0)], vec![seg(5.0, 9.0)]];
    let preds = vec![vec![pred(0.0, 5.0, 1.0)], vec![pred(5.0, 9.0, 1.0)]];
    assert_eq!(recall_at_k(&preds, &gts, 1, 0.5).unwrap(), 100.0);
}

#[test]
fn recall_empty_inputs_error() {
    assert!(matches!(
        recall_at_k(&[], &[], 1, 0.5),
        Err(Error::EmptyInput(_))
    ));
}

// -- mAP -------------------------------------------------------------------------

#[test]
fn single_matching_prediction_is_full_ap() {
    let gts = vec![vec![seg(0.0, 10.0)]];
    let preds = vec![vec![pred(0.0, 10.0, 0.7)]];
    assert_eq!(mean_average_precision(&preds, &gts, 0.5).unwrap(), 100.0);
}

#[test]
fn correct_prediction_ranked_second_gives_half() {
    // AP = precision at rank 2 = 1/2.
    let gts = vec![vec![seg(0.0, 10.0)]];
    let preds = vec![vec![
        pred(50.0, 60.0, 0.9), // wrong, ranked first
        pred(0.0, 10.0, 0.4),  // right, ranked second
    ]];
    assert_eq!(mean_average_precision(&preds, &gts, 0.5).unwrap(), 50.0);
}

#[test]
fn multi_gt_matches_each_ground_truth_once() {
    let gts = vec![vec![seg(0.0, 10.0), seg(20.0, 30.0)]];
    // Both predictions land on the first ground truth; the second is a
    // duplicate and must not match again: AP = (1/1) / 2.
    let preds = vec![vec![pred(0.0, 10.0, 0.9), pred(0.0, 10.0, 0.8)]];
    assert_eq!(mean_average_precision(&preds, &gts, 0.5).unwrap(), 50.0);

    // One prediction per ground truth: perfect AP.
    let preds = vec![vec![pred(0.0, 10.0, 0.9), pred(20.0, 30.0, 0.8)]];
    assert_eq!(mean_average_precision(&preds, &gts, 0.5).unwrap(), 100.0);
}

// -- mIoU ------------------------------------------------------------------------

#[test]
fn miou_exact_and_disjoint_extremes() {
    let gts = vec![vec![seg(0.0, 4.0)], vec![seg(6.0, 9.0)]];
    let exact = vec![vec![pred(0.0, 4.0, 1.0)], vec![pred(6.0, 9.0, 1.0)]];
    assert_eq!(mean_iou(&exact, &gts).unwrap(), 100.0);
    let disjoint = vec![vec![pred(20.0, 24.0, 1.0)], vec![pred(30.0, 34.0, 1.0)]];
    assert_eq!(mean_iou(&disjoint, &gts).unwrap(), 0.0);
}

#[test]
fn miou_requires_a_top_prediction() {
    let gts = vec![vec![seg(0.0, 4.0)]];
    let preds: Vec<Vec<MomentPrediction>> = vec![vec![]];
    assert!(matches!(mean_iou(&preds, &gts), Err(Error::EmptyInput(_))));
}

// -- brute-force oracles over random instances -------------------------------------

/// Literal re-count of recall: no ranking helper shared with the
/// implementation.
fn oracle_recall(
    preds: &[Vec<MomentPrediction>],
    gts: &[Vec<TemporalSegment>],
    k: usize,
    thr: f64,
) -> f64 {
    let mut hits = 0usize;
    for (ps, gs) in preds.iter().zip(gts) {
        let mut order: Vec<&MomentPrediction> = ps.iter().collect();
        order.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap()
                .then(a.segment.start.partial_cmp(&b.segment.start).unwrap())
                .then(a.segment.end.partial_cmp(&b.segment.end).unwrap())
        });
        let mut hit = false;
        for p in order.iter().take(k) {
            for g in gs {
                let inter = (p.segment.end.min(g.end) - p.segment.start.max(g.start)).max(0.0);
                let union = (p.segment.end - p.segment.start) + (g.end - g.start) - inter;
                if inter > 0.0 && inter / union >= thr {
                    hit = true;
                }
            }
        }
        hits += usize::from(hit);
    }
    100.0 * hits as f64 / gts.len() as f64
}

/// Exhaustive rank walk for AP with at-most-once ground-truth matching.
fn oracle_ap(ps: &[MomentPrediction], gs: &[TemporalSegment], thr: f64) -> f64 {
    let mut order: Vec<&MomentPrediction> = ps.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.segment.start.partial_cmp(&b.segment.start).unwrap())
            .then(a.segment.end.partial_cmp(&b.segment.end).unwrap())
    });
    let mut used = vec![false; gs.len()];
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, p) in order.iter().enumerate() {
        let mut best_iou = -1.0;
        let mut best_idx = None;
        for (i, g) in gs.iter().enumerate() {
            if used[i] {
                continue;
            }
            let inter = (p.segment.end.min(g.end) - p.segment.start.max(g.start)).max(0.0);
            let union = (p.segment.end - p.segment.start) + (g.end - g.start) - inter;
            let iou = if inter > 0.0 { inter / union } else { 0.0 };
            if iou >= thr && iou > best_iou {
                best_iou = iou;
                best_idx = Some(i);
            }
        }
        if let Some(i) = best_idx {
            used[i] = true;
            tp += 1;
            ap += tp as f64 / (rank + 1) as f64;
        }
    }
    ap / gs.len() as f64
}

fn oracle_map(preds: &[Vec<MomentPrediction>], gts: &[Vec<TemporalSegment>], thr: f64) -> f64 {
    let total: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| oracle_ap(p, g, thr))
        .sum();
    100.0 * total / gts.len() as f64
}

fn oracle_miou(preds: &[Vec<MomentPrediction>], gts: &[Vec<TemporalSegment>]) -> f64 {
    let mut total = 0.0;
    for (ps, gs) in preds.iter().zip(gts) {
        let mut order: Vec<&MomentPrediction> = ps.iter().collect();
        order.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap()
                .then(a.segment.start.partial_cmp(&b.segment.start).unwrap())
                .then(a.segment.end.partial_cmp(&b.segment.end).unwrap())
        });
        let top = order[0];
        let mut best = 0.0f64;
        for g in gs {
            let inter = (top.segment.end.min(g.end) - top.segment.start.max(g.start)).max(0.0);
            let union = (top.segment.end - top.segment.start) + (g.end - g.start) - inter;
            if inter > 0.0 {
                best = best.max(inter / union);
            }
        }
        total += best;
    }
    100.0 * total / gts.len() as f64
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    max_queries: usize,
    max_preds: usize,
    multi_gt: bool,
) -> (Vec<Vec<MomentPrediction>>, Vec<Vec<TemporalSegment>>) {
    let n_q = rng.gen_range(1..=max_queries);
    let mut gts = Vec::with_capacity(n_q);
    let mut preds = Vec::with_capacity(n_q);
    for _ in 0..n_q {
        let n_gt = if multi_gt { rng.gen_range(1..=3) } else { 1 };
        let mut gs = Vec::with_capacity(n_gt);
        for _ in 0..n_gt {
            let s: f64 = rng.gen_range(0.0..80.0);
            gs.push(seg(s, s + rng.gen_range(1.0..20.0)));
        }
        gts.push(gs);
        let n_p = rng.gen_range(1..=max_preds);
        let mut ps = Vec::with_capacity(n_p);
        for _ in 0..n_p {
            let s: f64 = rng.gen_range(0.0..80.0);
            ps.push(pred(
                s,
                s + rng.gen_range(1.0..20.0),
                rng.gen_range(0.0..1.0),
            ));
        }
        preds.push(ps);
    }
    (preds, gts)
}

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..60 {
        let (preds, gts) = random_instance(&mut rng, 20, 10, case % 3 == 0);
        for thr in [0.5, 0.7] {
            for k in [1, 3] {
                let ours = recall_at_k(&preds, &gts, k, thr).unwrap();
                let oracle = oracle_recall(&preds, &gts, k, thr);
                assert!((ours - oracle).abs() < 1e-9, "recall case {case}");
            }
        }
        for thr in [0.5, 0.75] {
            let ours = mean_average_precision(&preds, &gts, thr).unwrap();
            let oracle = oracle_map(&preds, &gts, thr);
            assert!((ours - oracle).abs() < 1e-9, "map case {case}");
        }
        let ours = mean_iou(&preds, &gts).unwrap();
        let oracle = oracle_miou(&preds, &gts);
        assert!((ours - oracle).abs() < 1e-9, "miou case {case}");
    }
}

#[test]
fn recall_monotone_in_k_and_antitone_in_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let (preds, gts) = random_instance(&mut rng, 10, 8, false);
        let mut last_k = 0.0;
        for k in 1..=5 {
            let r = recall_at_k(&preds, &gts, k, 0.5).unwrap();
            assert!(r + 1e-12 >= last_k);
            last_k = r;
        }
        let mut last_thr = 100.0 + 1e-12;
        for thr in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let r = recall_at_k(&preds, &gts, 1, thr).unwrap();
            assert!(r <= last_thr + 1e-12);
            last_thr = r;
        }
    }
}

#[test]
fn single_prediction_map_equals_r1() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..40 {
        let (mut preds, gts) = random_instance(&mut rng, 12, 6, false);
        for p in &mut preds {
            p.truncate(1);
        }
        for thr in [0.3, 0.5, 0.7] {
            let map = mean_average_precision(&preds, &gts, thr).unwrap();
            let r1 = recall_at_k(&preds, &gts, 1, thr).unwrap();
            assert!((map - r1).abs() < 1e-9);
        }
    }
}

// -- files -----------------------------------------------------------------------

#[test]
fn eval_files_group_by_query_in_gt_order() {
    let gt = "{\"query_id\":\"b\",\"start\":0.0,\"end\":2.0}\n\
              {\"query_id\":\"a\",\"start\":1.0,\"end\":4.0}\n\
              {\"query_id\":\"b\",\"start\":6.0,\"end\":8.0}\n";
    let pr = "{\"query_id\":\"a\",\"start\":1.0,\"end\":4.0,\"confidence\":0.8}\n\
              {\"query_id\":\"b\",\"start\":0.0,\"end\":2.0,\"confidence\":0.5}\n";
    let data = load_eval_data(gt.as_bytes(), pr.as_bytes()).unwrap();
    assert_eq!(data.query_ids, vec!["b", "a"]);
    assert_eq!(data.gts[0].len(), 2);
    assert_eq!(data.preds[0].len(), 1);
}

#[test]
fn unknown_prediction_query_is_rejected() {
    let gt = "{\"query_id\":\"a\",\"start\":0.0,\"end\":2.0}\n";
    let pr = "{\"query_id\":\"zz\",\"start\":0.0,\"end\":2.0}\n";
    assert!(matches!(
        load_eval_data(gt.as_bytes(), pr.as_bytes()),
        Err(Error::Parse(_))
    ));
}

#[test]
fn empty_prediction_file_is_empty_input() {
    let gt = "{\"query_id\":\"a\",\"start\":0.0,\"end\":2.0}\n";
    assert!(matches!(
        load_eval_data(gt.as_bytes(), "".as_bytes()),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn evaluate_bundles_all_metrics() {
    let gts = vec![vec![seg(0.0, 10.0)], vec![seg(20.0, 30.0)]];
    let preds = vec![vec![pred(0.0, 10.0, 0.9)], vec![pred(20.0, 30.0, 0.8)]];
    let result = evaluate(&preds, &gts, &[0.5, 0.7], &[0.5, 0.75]).unwrap();
    assert_eq!(result.r1_at, vec![(0.5, 100.0), (0.7, 100.0)]);
    assert_eq!(result.map_at, vec![(0.5, 100.0), (0.75, 100.0)]);
    assert_eq!(result.map_avg, 100.0);
    assert_eq!(result.miou, 100.0);
    let tsv = result.to_tsv();
    assert!(tsv.contains("r1@0.5\t100.0000"));
    assert!(tsv.contains("miou\t100.0000"));
}
