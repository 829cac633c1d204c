//! Deterministic synthetic embedding traces with planted redundancy.
//!
//! A trace is built from `plateaus` contiguous runs of near-duplicate frames.
//! Each plateau gets its own unit base direction; the bases are mutually
//! orthogonal, so inter-plateau similarity sits near zero while intra-plateau
//! similarity stays near one. With `noise == 0` every frame of a plateau is
//! bit-identical to its base and intra-plateau cosine is exactly 1.0.
//!
//! All randomness flows from a single u64 seed through ChaCha8, which is
//! specified byte-for-byte and therefore stable across platforms and
//! releases; identical parameters always produce identical traces.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embeddings::{EmbeddingVector, FrameRecord, FrameSequence};
use crate::error::{Error, Result};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub dimension: usize,
    pub plateaus: usize,
    /// Per-component Gaussian noise scale added on top of the plateau base.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be at least 1".into()));
        }
        if self.plateaus == 0 || self.plateaus > self.n_frames {
            return Err(Error::Config(format!(
                "plateaus must be in 1..={}, got {}",
                self.n_frames, self.plateaus
            )));
        }
        if self.dimension < self.plateaus {
            return Err(Error::Config(format!(
                "dimension {} too small for {} mutually orthogonal plateau bases",
                self.dimension, self.plateaus
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Mutually orthonormal base directions via Gram-Schmidt over Gaussian draws.
fn orthonormal_bases(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(count);
    while bases.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for b in &bases {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue; // essentially impossible for dim >= count; redraw
        }
        for x in &mut v {
            *x /= norm;
        }
        bases.push(v);
    }
    bases
}

/// Plateau sizes as equal as possible: earlier plateaus take the remainder.
fn plateau_sizes(n_frames: usize, plateaus: usize) -> Vec<usize> {
    let base = n_frames / plateaus;
    let rem = n_frames % plateaus;
    (0..plateaus).map(|i| base + usize::from(i < rem)).collect()
}

/// Generate a trace of `n_frames` frames at one-second spacing, with the
/// planted plateau start indices recorded in the trace header.
pub fn generate(cfg: &SynthConfig) -> Result<Trace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bases = orthonormal_bases(&mut rng, cfg.plateaus, cfg.dimension);
    let sizes = plateau_sizes(cfg.n_frames, cfg.plateaus);

    let mut boundaries = Vec::with_capacity(cfg.plateaus);
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut index = 0usize;
    for (plateau, size) in sizes.iter().enumerate() {
        boundaries.push(index);
        for _ in 0..*size {
            let values: Vec<f64> = if cfg.noise == 0.0 {
                bases[plateau].clone()
            } else {
                bases[plateau]
                    .iter()
                    .map(|b| b + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            frames.push(FrameRecord::new(
                index,
                index as f64,
                EmbeddingVector::new(values)?,
            )?);
            index += 1;
        }
    }

    Ok(Trace {
        source_id: format!("synth-{}", cfg.seed),
        plateaus: Some(boundaries),
        sequence: FrameSequence::new(frames, cfg.n_frames as f64)?,
    })
}
