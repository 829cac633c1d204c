//! Query-aware importance modulation: scores each frame-caption pair against
//! the query and rescales the caption embedding by that score.
//!
//! The score is `alpha1 * V(f, q) + alpha2 * Vbar(q, f, c)`, where `V` is
//! plain cosine similarity and `Vbar` refines the query-caption similarity
//! with the frame-caption similarity. `Vbar` defaults to the rectified
//! product `max(0, cos(q, c)) * max(0, cos(f, c))`: both factors are clamped
//! at zero the way CLIPScore clamps, and the product form means a caption
//! must agree with both the query and its own frame to score highly, so a
//! caption hallucinated off-frame is suppressed. The mean and min variants
//! stay available for experimentation.
//!
//! Scores are applied as-is: a negative visual-query similarity can produce
//! a negative score and the re-weighting does not clamp it.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::captions::{nearest_frame_index, CaptionPath, CaptionRecord, SceneSegment};
use crate::embeddings::{cosine_similarity, EmbeddingVector, FrameSequence, TimeSpan};
use crate::error::{Error, Result};
use crate::trace::fmt_f64;

/// Shape of the refined similarity term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbarForm {
    #[default]
    Product,
    Mean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModulationConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub vbar_form: VbarForm,
}

impl ModulationConfig {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1.is_finite() && alpha2.is_finite()) || alpha1 < 0.0 || alpha2 < 0.0 {
            return Err(Error::Config(format!(
                "alpha coefficients must be finite and non-negative, got {alpha1}, {alpha2}"
            )));
        }
        if alpha1 + alpha2 <= 0.0 {
            return Err(Error::Config("alpha1 + alpha2 must be positive".into()));
        }
        Ok(Self {
            alpha1,
            alpha2,
            vbar_form: VbarForm::default(),
        })
    }

    pub fn with_vbar(mut self, form: VbarForm) -> Self {
        self.vbar_form = form;
        self
    }
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.7,
            alpha2: 0.3,
            vbar_form: VbarForm::default(),
        }
    }
}

/// Visual-query similarity `V(f, q)`: plain cosine.
pub fn visual_query_similarity(f: &EmbeddingVector, q: &EmbeddingVector) -> Result<f64> {
    cosine_similarity(f, q)
}

/// Refined query-caption similarity in [0, 1] under the given form.
pub fn refined_caption_similarity_with(
    form: VbarForm,
    q: &EmbeddingVector,
    f: &EmbeddingVector,
    c: &EmbeddingVector,
) -> Result<f64> {
    let qc = cosine_similarity(q, c)?.max(0.0);
    let fc = cosine_similarity(f, c)?.max(0.0);
    Ok(match form {
        VbarForm::Product => qc * fc,
        VbarForm::Mean => 0.5 * (qc + fc),
        VbarForm::Min => qc.min(fc),
    })
}

/// Refined query-caption similarity, default rectified-product form.
pub fn refined_caption_similarity(
    q: &EmbeddingVector,
    f: &EmbeddingVector,
    c: &EmbeddingVector,
) -> Result<f64> {
    refined_caption_similarity_with(VbarForm::Product, q, f, c)
}

/// The full weighting score `alpha1 * V + alpha2 * Vbar`.
pub fn caption_weight(
    f: &EmbeddingVector,
    c: &EmbeddingVector,
    q: &EmbeddingVector,
    cfg: &ModulationConfig,
) -> Result<f64> {
    let v = visual_query_similarity(f, q)?;
    let vbar = refined_caption_similarity_with(cfg.vbar_form, q, f, c)?;
    Ok(cfg.alpha1 * v + cfg.alpha2 * vbar)
}

/// A caption with its relevance score and score-scaled embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCaption {
    pub caption: CaptionRecord,
    pub score: f64,
    pub reweighted_embedding: EmbeddingVector,
}

/// Score every caption against the query and its paired frame, in input
/// order. A caption is paired with the frame nearest its segment midpoint
/// (tie: earlier frame).
pub fn modulate_captions(
    frames: &FrameSequence,
    captions: &[CaptionRecord],
    q: &EmbeddingVector,
    cfg: &ModulationConfig,
) -> Result<Vec<ScoredCaption>> {
    if frames.is_empty() && !captions.is_empty() {
        return Err(Error::Pairing(
            "no frames available to pair captions with".into(),
        ));
    }
    let mut out = Vec::with_capacity(captions.len());
    for c in captions {
        let idx = nearest_frame_index(frames.frames(), c.segment.midpoint()).ok_or_else(|| {
            Error::Pairing(format!(
                "segment {} has no mappable frame",
                c.segment.segment_id
            ))
        })?;
        let frame = &frames.frames()[idx];
        let score = caption_weight(&frame.embedding, &c.embedding, q, cfg)?;
        out.push(ScoredCaption {
            caption: c.clone(),
            score,
            reweighted_embedding: c.embedding.scale(score),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scored captions file
// ---------------------------------------------------------------------------

/// File form of a scored caption. Carries the original caption embedding
/// (the reweighted one is exactly `score * embedding`) plus the caption
/// bookkeeping fields so the sequence builder can run from this file alone.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScoredFileRecord {
    pub segment_id: usize,
    pub segment_start: f64,
    pub segment_end: f64,
    pub score: f64,
    pub caption_text: String,
    pub path: CaptionPath,
    pub relevance_passed: bool,
    pub fallback: bool,
    pub embedding: Vec<f64>,
}

pub fn write_scored_captions<W: Write>(mut writer: W, scored: &[ScoredCaption]) -> Result<()> {
    for s in scored {
        let emb: Vec<String> = s
            .caption
            .embedding
            .as_slice()
            .iter()
            .map(|v| fmt_f64(*v))
            .collect();
        writeln!(
            writer,
            "{{\"segment_id\":{},\"segment_start\":{},\"segment_end\":{},\"score\":{},\"caption_text\":{},\"path\":{},\"relevance_passed\":{},\"fallback\":{},\"embedding\":[{}]}}",
            s.caption.segment.segment_id,
            fmt_f64(s.caption.segment.span.start_sec),
            fmt_f64(s.caption.segment.span.end_sec),
            fmt_f64(s.score),
            serde_json::to_string(&s.caption.text).expect("string"),
            serde_json::to_string(&s.caption.path).expect("enum"),
            s.caption.relevance_passed,
            s.caption.fallback,
            emb.join(","),
        )?;
    }
    Ok(())
}

pub fn read_scored_captions<R: Read>(reader: R) -> Result<Vec<ScoredFileRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScoredFileRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("scored caption line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_scored_captions_file<P: AsRef<Path>>(path: P, scored: &[ScoredCaption]) -> Result<()> {
    let mut buf = Vec::new();
    write_scored_captions(&mut buf, scored)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_scored_captions_file<P: AsRef<Path>>(path: P) -> Result<Vec<ScoredFileRecord>> {
    let file = fs::File::open(path)?;
    read_scored_captions(file)
}

/// Rebuild in-memory scored captions from file records, re-deriving the
/// representative frame and the reweighted embedding.
pub fn attach_scored(
    records: &[ScoredFileRecord],
    frames: &FrameSequence,
) -> Result<Vec<ScoredCaption>> {
    if frames.is_empty() && !records.is_empty() {
        return Err(Error::Pairing(
            "cannot attach scored captions: frame sequence is empty".into(),
        ));
    }
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let span = TimeSpan::new(r.segment_start, r.segment_end)?;
        let mid = 0.5 * (r.segment_start + r.segment_end);
        let rep = nearest_frame_index(frames.frames(), mid).ok_or_else(|| {
            Error::Pairing(format!("segment {} has no mappable frame", r.segment_id))
        })?;
        let embedding = EmbeddingVector::new(r.embedding.clone())?;
        let caption = CaptionRecord {
            segment: SceneSegment::new(r.segment_id, span, frames.frames()[rep].clone())?,
            text: r.caption_text.clone(),
            embedding: embedding.clone(),
            path: r.path,
            relevance_passed: r.relevance_passed,
            fallback: r.fallback,
        };
        out.push(ScoredCaption {
            caption,
            score: r.score,
            reweighted_embedding: embedding.scale(r.score),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::FrameRecord;

    fn ev(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn unit_at_cos(target: f64) -> (EmbeddingVector, EmbeddingVector) {
        // Planar pair with exactly the requested cosine.
        let a = ev(&[1.0, 0.0]);
        let b = ev(&[target, (1.0 - target * target).sqrt()]);
        (a, b)
    }

    #[test]
    fn visual_query_similarity_is_cosine() {
        let u = ev(&[0.3, 0.4]);
        assert_eq!(visual_query_similarity(&u, &u).unwrap(), 1.0);
        let (a, b) = (ev(&[1.0, 0.0]), ev(&[0.0, 1.0]));
        assert_eq!(visual_query_similarity(&a, &b).unwrap(), 0.0);
        let s = visual_query_similarity(&ev(&[1.0, 0.0]), &ev(&[0.6, 0.8])).unwrap();
        assert!((s - 0.6).abs() < 1e-12);
    }

    #[test]
    fn refined_similarity_all_aligned_is_one() {
        let u = ev(&[0.5, 0.5, 0.1]);
        assert!((refined_caption_similarity(&u, &u, &u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refined_similarity_rectifies_negative_query_caption() {
        // cos(q, c) < 0 floors the whole term at zero, whatever f does.
        let q = ev(&[1.0, 0.0]);
        let c = ev(&[-0.9, 0.1]);
        for f in [ev(&[1.0, 0.0]), ev(&[-1.0, 0.0]), ev(&[0.2, 0.8])] {
            assert_eq!(refined_caption_similarity(&q, &f, &c).unwrap(), 0.0);
        }
    }

    #[test]
    fn refined_similarity_planar_product_case() {
        // cos(q, c) = 0.8 and cos(f, c) = 0.5 by construction: 0.8 * 0.5 = 0.40.
        let c = ev(&[0.8, 0.6]);
        let q = ev(&[1.0, 0.0]); // cos(q, c) = 0.8
                                 // Rotate c by 60 degrees so cos(f, c) = 0.5.
        let (s60, c60) = (3.0f64.sqrt() / 2.0, 0.5);
        let f = ev(&[0.8 * c60 - 0.6 * s60, 0.8 * s60 + 0.6 * c60]);
        let v = refined_caption_similarity(&q, &f, &c).unwrap();
        assert!((v - 0.40).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn vbar_variants_stay_in_unit_interval_and_differ() {
        let c = ev(&[0.8, 0.6]);
        let q = ev(&[1.0, 0.0]);
        let f = ev(&[0.0, 1.0]); // cos(f, c) = 0.6
        let prod = refined_caption_similarity_with(VbarForm::Product, &q, &f, &c).unwrap();
        let mean = refined_caption_similarity_with(VbarForm::Mean, &q, &f, &c).unwrap();
        let min = refined_caption_similarity_with(VbarForm::Min, &q, &f, &c).unwrap();
        assert!((prod - 0.48).abs() < 1e-12);
        assert!((mean - 0.7).abs() < 1e-12);
        assert!((min - 0.6).abs() < 1e-12);
    }

    #[test]
    fn caption_weight_single_term_collapses() {
        let (q, f) = unit_at_cos(0.37);
        let c = ev(&[0.5, 0.5]);
        let only_v = ModulationConfig::new(1.0, 0.0).unwrap();
        let w = caption_weight(&f, &c, &q, &only_v).unwrap();
        assert!((w - 0.37).abs() < 1e-9, "got {w}");

        let only_vbar = ModulationConfig::new(0.0, 1.0).unwrap();
        let w = caption_weight(&f, &c, &q, &only_vbar).unwrap();
        let vbar = refined_caption_similarity(&q, &f, &c).unwrap();
        assert_eq!(w, 1.0 * vbar);
    }

    #[test]
    fn caption_weight_default_coefficients_hand_case() {
        // V(f, q) = 0.5 and Vbar = 0.4 * 0.5 = 0.2 by construction, so the
        // default 0.7/0.3 weighting gives 0.7*0.5 + 0.3*0.2 = 0.41.
        let q = ev(&[1.0, 0.0, 0.0]);
        let f = ev(&[0.5, 0.75f64.sqrt(), 0.0]);
        let c2 = 0.3 / 0.75f64.sqrt();
        let c = ev(&[0.4, c2, (1.0 - 0.16 - c2 * c2).sqrt()]);
        let cfg = ModulationConfig::default();
        assert_eq!((cfg.alpha1, cfg.alpha2), (0.7, 0.3));
        let w = caption_weight(&f, &c, &q, &cfg).unwrap();
        assert!((w - 0.41).abs() < 1e-9, "got {w}");
    }

    fn record_for(
        segment_id: usize,
        span: (f64, f64),
        frame: &FrameRecord,
        emb: EmbeddingVector,
    ) -> CaptionRecord {
        CaptionRecord {
            segment: SceneSegment::new(
                segment_id,
                TimeSpan::new(span.0, span.1).unwrap(),
                frame.clone(),
            )
            .unwrap(),
            text: format!("caption {segment_id}"),
            embedding: emb,
            path: CaptionPath::Generic,
            relevance_passed: false,
            fallback: false,
        }
    }

    fn planar_frames() -> FrameSequence {
        let recs = vec![
            FrameRecord::new(0, 0.5, ev(&[1.0, 0.0])).unwrap(),
            FrameRecord::new(1, 2.5, ev(&[0.0, 1.0])).unwrap(),
            FrameRecord::new(2, 4.5, ev(&[-1.0, 0.0])).unwrap(),
        ];
        FrameSequence::new(recs, 6.0).unwrap()
    }

    #[test]
    fn zero_score_annihilates_embedding() {
        let frames = planar_frames();
        // Caption over segment [2, 4): paired with the frame at 2.5 (f = e2).
        // q = e1, c = e1: V(f, q) = 0; cos(f, c) = 0 rectifies Vbar to 0.
        let f0 = frames.frames()[1].clone();
        let rec = record_for(1, (2.0, 4.0), &f0, ev(&[1.0, 0.0]));
        let scored = modulate_captions(
            &frames,
            &[rec],
            &ev(&[1.0, 0.0]),
            &ModulationConfig::default(),
        )
        .unwrap();
        assert_eq!(scored[0].score, 0.0);
        assert!(scored[0].reweighted_embedding.is_zero());
    }

    #[test]
    fn unit_score_is_identity() {
        let frames = planar_frames();
        let f0 = frames.frames()[0].clone();
        // q = f = c aligned: V = 1, Vbar = 1; alphas 0.5 + 0.5 sum exactly 1.
        let rec = record_for(0, (0.0, 2.0), &f0, ev(&[1.0, 0.0]));
        let cfg = ModulationConfig::new(0.5, 0.5).unwrap();
        let scored =
            modulate_captions(&frames, std::slice::from_ref(&rec), &ev(&[2.0, 0.0]), &cfg).unwrap();
        assert_eq!(scored[0].score, 1.0);
        assert_eq!(scored[0].reweighted_embedding, rec.embedding);
    }

    #[test]
    fn scores_match_per_caption_oracle_calls() {
        let frames = planar_frames();
        let q = ev(&[0.6, 0.8]);
        let captions = vec![
            record_for(0, (0.0, 2.0), &frames.frames()[0], ev(&[0.9, 0.1])),
            record_for(1, (2.0, 4.0), &frames.frames()[1], ev(&[0.2, 0.8])),
            record_for(2, (4.0, 6.0), &frames.frames()[2], ev(&[-0.5, 0.5])),
        ];
        let cfg = ModulationConfig::default();
        let scored = modulate_captions(&frames, &captions, &q, &cfg).unwrap();
        // Pairing is midpoint -> nearest frame: segments map to frames 0, 1, 2.
        for (i, s) in scored.iter().enumerate() {
            let expect = caption_weight(
                &frames.frames()[i].embedding,
                &captions[i].embedding,
                &q,
                &cfg,
            )
            .unwrap();
            assert_eq!(s.score, expect);
            for (r, o) in s
                .reweighted_embedding
                .as_slice()
                .iter()
                .zip(captions[i].embedding.as_slice())
            {
                assert!((r - o * expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pairing_without_frames_is_an_error() {
        let empty = FrameSequence::new(vec![], 4.0).unwrap();
        let frames = planar_frames();
        let rec = record_for(0, (0.0, 2.0), &frames.frames()[0], ev(&[1.0, 0.0]));
        assert!(matches!(
            modulate_captions(
                &empty,
                &[rec],
                &ev(&[1.0, 0.0]),
                &ModulationConfig::default()
            ),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn invalid_alphas_are_config_errors() {
        assert!(ModulationConfig::new(-0.1, 0.5).is_err());
        assert!(ModulationConfig::new(0.0, 0.0).is_err());
        assert!(ModulationConfig::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn scored_captions_round_trip_through_file_form() {
        let frames = planar_frames();
        let q = ev(&[0.6, 0.8]);
        let captions = vec![
            record_for(0, (0.0, 2.0), &frames.frames()[0], ev(&[0.9, 0.1])),
            record_for(1, (2.0, 4.0), &frames.frames()[1], ev(&[0.2, 0.8])),
        ];
        let scored =
            modulate_captions(&frames, &captions, &q, &ModulationConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_scored_captions(&mut buf, &scored).unwrap();
        let records = read_scored_captions(&buf[..]).unwrap();
        let back = attach_scored(&records, &frames).unwrap();
        assert_eq!(back, scored);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0f64..10.0, dim).prop_filter("norm away from zero", |v| {
                v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-2
            })
        }

        proptest! {
            #[test]
            fn rescaling_alphas_preserves_score_ordering(
                f in nonzero_vec(4),
                q in nonzero_vec(4),
                cs in proptest::collection::vec(nonzero_vec(4), 2..8),
                s in prop_oneof![Just(0.1f64), Just(2.0), Just(10.0)],
            ) {
                let f = EmbeddingVector::new(f).unwrap();
                let q = EmbeddingVector::new(q).unwrap();
                let base = ModulationConfig::new(0.7, 0.3).unwrap();
                let scaled = ModulationConfig::new(0.7 * s, 0.3 * s).unwrap();
                let order = |cfg: &ModulationConfig| -> Vec<usize> {
                    let mut idx: Vec<usize> = (0..cs.len()).collect();
                    let scores: Vec<f64> = cs
                        .iter()
                        .map(|c| {
                            let c = EmbeddingVector::new(c.clone()).unwrap();
                            caption_weight(&f, &c, &q, cfg).unwrap()
                        })
                        .collect();
                    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
                    idx
                };
                prop_assert_eq!(order(&base), order(&scaled));
            }

            #[test]
            fn reweighted_is_parallel_to_original(
                f in nonzero_vec(5),
                q in nonzero_vec(5),
                c in nonzero_vec(5),
            ) {
                let f = EmbeddingVector::new(f).unwrap();
                let q = EmbeddingVector::new(q).unwrap();
                let c = EmbeddingVector::new(c).unwrap();
                let cfg = ModulationConfig::default();
                let score = caption_weight(&f, &c, &q, &cfg).unwrap();
                let rew = c.scale(score);
                if score.abs() > 1e-9 {
                    let cos = cosine_similarity(&rew, &c).unwrap();
                    let expect = if score > 0.0 { 1.0 } else { -1.0 };
                    prop_assert!((cos - expect).abs() < 1e-9);
                }
            }

            #[test]
            fn score_is_bounded_by_alpha_sum(
                f in nonzero_vec(4),
                q in nonzero_vec(4),
                c in nonzero_vec(4),
                a1 in 0.0f64..2.0,
                a2 in 0.0f64..2.0,
            ) {
                prop_assume!(a1 + a2 > 1e-9);
                let cfg = ModulationConfig::new(a1, a2).unwrap();
                let w = caption_weight(
                    &EmbeddingVector::new(f).unwrap(),
                    &EmbeddingVector::new(c).unwrap(),
                    &EmbeddingVector::new(q).unwrap(),
                    &cfg,
                ).unwrap();
                prop_assert!(w.abs() <= a1 + a2 + 1e-12);
            }

            #[test]
            fn alpha2_zero_makes_scores_caption_independent(
                f in nonzero_vec(4),
                q in nonzero_vec(4),
                c1 in nonzero_vec(4),
                c2 in nonzero_vec(4),
            ) {
                let f = EmbeddingVector::new(f).unwrap();
                let q = EmbeddingVector::new(q).unwrap();
                let cfg = ModulationConfig::new(1.0, 0.0).unwrap();
                let w1 = caption_weight(&f, &EmbeddingVector::new(c1).unwrap(), &q, &cfg).unwrap();
                let w2 = caption_weight(&f, &EmbeddingVector::new(c2).unwrap(), &q, &cfg).unwrap();
                prop_assert_eq!(w1, w2);
            }
        }
    }
}
