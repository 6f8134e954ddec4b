//! Parameterized synthetic corpus with a genuine-vs-deepfake dynamical gap.
//!
//! Genuine embeddings are Gaussian random walks whose increments pass through
//! a one-pole low-pass filter. Deepfake embeddings use the same process with
//! the increments scaled by `velocity_scale_fake`, so their mean velocity is
//! that fraction of the genuine one. A per-segment "speaker gain" with unit
//! mean spreads both classes identically.
//!
//! Paired waveforms are harmonic carriers under a syllabic amplitude
//! envelope. The envelope floor controls the dynamic range: genuine floors
//! are low and widely spread, deepfake floors higher and tightly clustered
//! (compressed).

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{
    peak_normalize, EmbeddingSequence, Label, Segment, Waveform, DEFAULT_FRAME_RATE,
    SEGMENT_SECONDS, TARGET_SAMPLE_RATE,
};

/// Ratio of the deepfake to genuine mean embedding velocity, 247.31 / 288.04.
pub const DEFAULT_VELOCITY_SCALE_FAKE: f64 = 0.8586;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub n_genuine: usize,
    pub n_fake: usize,
    pub seed: u64,
    /// Embedding dimensionality D.
    pub dims: usize,
    /// Frames per segment T (150 = 3 s at 50 Hz).
    pub frames: usize,
    pub frame_rate: u32,
    pub velocity_scale_fake: f64,
    /// One-pole low-pass coefficient on the increments; 1.0 disables smoothing.
    pub smoothness: f64,
    /// Stationary per-dimension std of the smoothed increments.
    pub step_scale: f64,
    /// Log-std of the per-segment speaker gain (shared by both classes).
    pub speaker_spread: f64,
    pub floor_genuine: f64,
    pub floor_spread_genuine: f64,
    pub floor_fake: f64,
    pub floor_spread_fake: f64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_genuine: 500,
            n_fake: 500,
            seed: 0,
            dims: 16,
            frames: SEGMENT_SECONDS * DEFAULT_FRAME_RATE as usize,
            frame_rate: DEFAULT_FRAME_RATE,
            velocity_scale_fake: DEFAULT_VELOCITY_SCALE_FAKE,
            smoothness: 0.3,
            step_scale: 0.05,
            speaker_spread: 0.2,
            floor_genuine: 0.02,
            floor_spread_genuine: 0.7,
            floor_fake: 0.04,
            floor_spread_fake: 0.3,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_genuine == 0 {
            return Err(Error::invalid("n_genuine", "must be positive"));
        }
        if self.n_fake == 0 {
            return Err(Error::invalid("n_fake", "must be positive"));
        }
        if self.dims == 0 {
            return Err(Error::invalid("dims", "must be positive"));
        }
        if self.frames < 4 {
            return Err(Error::invalid("frames", "need at least 4 frames"));
        }
        if self.frame_rate == 0 {
            return Err(Error::invalid("frame_rate", "must be positive"));
        }
        if !(self.velocity_scale_fake > 0.0 && self.velocity_scale_fake <= 1.0) {
            return Err(Error::invalid("velocity_scale_fake", "must lie in (0, 1]"));
        }
        if !(self.smoothness > 0.0 && self.smoothness <= 1.0) {
            return Err(Error::invalid("smoothness", "must lie in (0, 1]"));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::invalid("step_scale", "must be positive"));
        }
        for (field, v) in [
            ("speaker_spread", self.speaker_spread),
            ("floor_spread_genuine", self.floor_spread_genuine),
            ("floor_spread_fake", self.floor_spread_fake),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be non-negative"));
            }
        }
        for (field, v) in [
            ("floor_genuine", self.floor_genuine),
            ("floor_fake", self.floor_fake),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(field, "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_genuine + self.n_fake
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generate the corpus: genuine segments first, then deepfakes. Each segment
/// draws from its own indexed substream, so the output is independent of
/// thread scheduling.
pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<Vec<Segment>> {
    spec.validate()?;
    (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let (label, local) = if i < spec.n_genuine {
                (Label::Genuine, i)
            } else {
                (Label::Deepfake, i - spec.n_genuine)
            };
            generate_segment(spec, label, local, i as u64)
        })
        .collect()
}

fn generate_segment(
    spec: &SyntheticCorpusSpec,
    label: Label,
    local_index: usize,
    stream_index: u64,
) -> Result<Segment> {
    let mut rng = rng::indexed_stream(spec.seed, "synthetic-segment", stream_index);
    let class_scale = match label {
        Label::Deepfake => spec.velocity_scale_fake,
        _ => 1.0,
    };
    // Unit-mean log-normal gain.
    let s = spec.speaker_spread;
    let z: f64 = StandardNormal.sample(&mut rng);
    let gain = (s * z - 0.5 * s * s).exp();

    let embedding = random_walk(spec, class_scale * gain, &mut rng)?;

    let (median, spread) = match label {
        Label::Deepfake => (spec.floor_fake, spec.floor_spread_fake),
        _ => (spec.floor_genuine, spec.floor_spread_genuine),
    };
    let z: f64 = StandardNormal.sample(&mut rng);
    let floor = (median * (spread * z).exp()).min(0.9);
    let waveform = envelope_waveform(floor, &mut rng)?;

    let tag = match label {
        Label::Deepfake => 'f',
        _ => 'g',
    };
    Ok(Segment::new(
        format!("syn-{tag}-{local_index:05}"),
        label,
        waveform,
        embedding,
    ))
}

fn random_walk(
    spec: &SyntheticCorpusSpec,
    scale: f64,
    rng: &mut rng::Rng,
) -> Result<EmbeddingSequence> {
    let (t, d) = (spec.frames, spec.dims);
    let c = spec.smoothness;
    // Innovation std that yields a stationary increment std of `step_scale`.
    let innovation = spec.step_scale * scale * (1.0 - (1.0 - c).powi(2)).sqrt() / c;
    let stationary = spec.step_scale * scale;

    let mut frames = Array2::<f64>::zeros((t, d));
    let mut pos: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let mut step: Vec<f64> = (0..d)
        .map(|_| stationary * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
        .collect();
    for i in 0..t {
        frames
            .row_mut(i)
            .iter_mut()
            .zip(&pos)
            .for_each(|(f, p)| *f = *p);
        for k in 0..d {
            let e: f64 = StandardNormal.sample(&mut *rng);
            step[k] = (1.0 - c) * step[k] + c * innovation * e;
            pos[k] += step[k];
        }
    }
    EmbeddingSequence::new(frames, spec.frame_rate)
}

fn envelope_waveform(floor: f64, rng: &mut rng::Rng) -> Result<Waveform> {
    let rate = f64::from(TARGET_SAMPLE_RATE);
    let n = SEGMENT_SECONDS * TARGET_SAMPLE_RATE as usize;
    let f0 = rng.random_range(90.0..220.0);
    let phases: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let syllable_rate = rng.random_range(3.0..6.0);
    let syllable_phase = rng.random_range(0.0..2.0 * PI);

    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let carrier: f64 = phases
                .iter()
                .enumerate()
                .map(|(k, ph)| {
                    let h = (k + 1) as f64;
                    (2.0 * PI * f0 * h * t + ph).sin() / h
                })
                .sum::<f64>()
                + 0.05 * Distribution::<f64>::sample(&StandardNormal, &mut *rng);
            let m = 0.5 * (1.0 + (2.0 * PI * syllable_rate * t + syllable_phase).sin());
            let env = floor + (1.0 - floor) * m * m;
            env * carrier
        })
        .collect();
    peak_normalize(&mut samples);
    Waveform::new(samples, TARGET_SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            n_genuine: 4,
            n_fake: 3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_and_labels() {
        let corpus = generate_synthetic(&small(1)).unwrap();
        assert_eq!(corpus.len(), 7);
        assert_eq!(
            corpus
                .iter()
                .filter(|s| s.label() == Label::Genuine)
                .count(),
            4
        );
        for seg in &corpus {
            assert_eq!(seg.waveform().len(), 48_000);
            assert_eq!(seg.waveform().sample_rate(), 16_000);
            assert!(seg.waveform().peak() <= 1.0);
            assert_eq!(seg.embedding().len(), 150);
            assert_eq!(seg.embedding().dim(), 16);
            assert_eq!(
                seg.embedding().delta_t() * f64::from(seg.embedding().frame_rate()),
                1.0
            );
        }
        assert_eq!(corpus[4].source_id(), "syn-f-00000");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&small(9)).unwrap();
        let b = generate_synthetic(&small(9)).unwrap();
        let c = generate_synthetic(&small(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = small(0);
        s.velocity_scale_fake = 1.5;
        assert!(generate_synthetic(&s).is_err());
        let mut s = small(0);
        s.n_fake = 0;
        assert!(generate_synthetic(&s).is_err());
        let mut s = small(0);
        s.smoothness = 0.0;
        assert!(generate_synthetic(&s).is_err());
    }
}
