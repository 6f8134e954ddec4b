//! Core signal types and the preprocessing contract: resample to 16 kHz, cut
//! into non-overlapping 3-second windows, peak-normalize each window.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_SAMPLE_RATE: u32 = 16_000;
pub const SEGMENT_SECONDS: usize = 3;
pub const DEFAULT_FRAME_RATE: u32 = 50;
pub const DEFAULT_EMBEDDING_DIM: usize = 1024;

/// Mono audio samples with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySignal);
        }
        if sample_rate == 0 {
            return Err(Error::BadSampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// A T×D sequence of frame embeddings sampled at `frame_rate` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    frames: Array2<f64>,
    frame_rate: u32,
}

impl EmbeddingSequence {
    pub fn new(frames: Array2<f64>, frame_rate: u32) -> Result<Self> {
        if frame_rate == 0 {
            return Err(Error::invalid("frame_rate", "must be positive"));
        }
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::EmptySignal);
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn frame_rate(&self) -> u32 {
        self.frame_rate
    }

    /// Frame spacing in seconds, `1 / frame_rate`.
    pub fn delta_t(&self) -> f64 {
        1.0 / f64::from(self.frame_rate)
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Temporal mean pooling to one D-vector.
    pub fn mean_pool(&self) -> Vec<f64> {
        let t = self.frames.nrows() as f64;
        self.frames
            .columns()
            .into_iter()
            .map(|c| c.sum() / t)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Deepfake,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Deepfake => "deepfake",
            Label::Unknown => "unknown",
        }
    }

    /// Class index used by the classifier head: genuine = 0, deepfake = 1.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Genuine => Some(0),
            Label::Deepfake => Some(1),
            Label::Unknown => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "genuine" | "bonafide" | "bona-fide" => Ok(Label::Genuine),
            "deepfake" | "fake" | "spoof" => Ok(Label::Deepfake),
            "unknown" | "" => Ok(Label::Unknown),
            other => Err(Error::invalid(
                "label",
                format!("unrecognised label `{other}`"),
            )),
        }
    }
}

/// One 3-second classification unit: waveform window plus its embedding
/// sequence. The label is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    waveform: Waveform,
    embedding: EmbeddingSequence,
    label: Label,
    source_id: String,
}

impl Segment {
    pub fn new(
        source_id: impl Into<String>,
        label: Label,
        waveform: Waveform,
        embedding: EmbeddingSequence,
    ) -> Self {
        Self {
            waveform,
            embedding,
            label,
            source_id: source_id.into(),
        }
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    pub fn embedding(&self) -> &EmbeddingSequence {
        &self.embedding
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }
}

/// Sample-rate conversion kernel. Linear interpolation is the default; a
/// windowed-sinc or polyphase kernel can be swapped in through this trait.
pub trait Resampler {
    fn resample(&self, samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LinearResampler;

impl Resampler for LinearResampler {
    fn resample(&self, samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
        if from_rate == to_rate || samples.is_empty() {
            return samples.to_vec();
        }
        let out_len =
            (samples.len() as u128 * u128::from(to_rate) / u128::from(from_rate)) as usize;
        let step = f64::from(from_rate) / f64::from(to_rate);
        let last = samples.len() - 1;
        (0..out_len)
            .map(|j| {
                let pos = j as f64 * step;
                let i = pos.floor() as usize;
                if i >= last {
                    return samples[last];
                }
                let frac = pos - i as f64;
                samples[i] + frac * (samples[i + 1] - samples[i])
            })
            .collect()
    }
}

/// Divide by the peak magnitude. All-zero windows are returned untouched.
pub fn peak_normalize(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        // Division (not multiplication by 1/peak) so the peak lands on exactly 1.0.
        for s in samples.iter_mut() {
            *s /= peak;
        }
    }
}

/// Resample to `target_rate`, split into 3-second windows (trailing partial
/// window dropped) and peak-normalize each window.
pub fn preprocess(raw: &Waveform, target_rate: u32) -> Result<Vec<Waveform>> {
    preprocess_with(raw, target_rate, &LinearResampler)
}

pub fn preprocess_with(
    raw: &Waveform,
    target_rate: u32,
    resampler: &dyn Resampler,
) -> Result<Vec<Waveform>> {
    if raw.is_empty() {
        return Err(Error::EmptySignal);
    }
    if target_rate != TARGET_SAMPLE_RATE {
        return Err(Error::invalid(
            "target_rate",
            format!("segments are defined at {TARGET_SAMPLE_RATE} Hz, got {target_rate}"),
        ));
    }
    let resampled = resampler.resample(raw.samples(), raw.sample_rate(), target_rate);
    let window = SEGMENT_SECONDS * target_rate as usize;
    resampled
        .chunks_exact(window)
        .map(|chunk| {
            let mut w = chunk.to_vec();
            peak_normalize(&mut w);
            Waveform::new(w, target_rate)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (secs * f64::from(rate)) as usize;
        let s = (0..n)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn seven_seconds_gives_two_windows() {
        let w = tone(220.0, 16_000, 7.0);
        let out = preprocess(&w, 16_000).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|w| w.len() == 48_000));
    }

    #[test]
    fn constant_signal_is_scaled_to_unit_peak() {
        let w = Waveform::new(vec![0.5; 48_000], 16_000).unwrap();
        let out = preprocess(&w, 16_000).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].peak(), 1.0);
        assert!(out[0].samples().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn all_zero_input_passes_through() {
        let w = Waveform::new(vec![0.0; 50_000], 16_000).unwrap();
        let out = preprocess(&w, 16_000).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn empty_and_bad_rate_are_rejected() {
        assert!(matches!(
            Waveform::new(vec![], 16_000),
            Err(Error::EmptySignal)
        ));
        assert!(matches!(
            Waveform::new(vec![0.1], 0),
            Err(Error::BadSampleRate(0))
        ));
        let w = tone(100.0, 16_000, 3.0);
        assert!(preprocess(&w, 8_000).is_err());
    }

    #[test]
    fn short_input_yields_no_windows() {
        let w = tone(100.0, 16_000, 2.5);
        assert!(preprocess(&w, 16_000).unwrap().is_empty());
    }

    #[test]
    fn resampling_32k_halves_length() {
        let raw = Waveform::new(vec![0.25; 96_000], 32_000).unwrap();
        let out = preprocess(&raw, 16_000).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 48_000);
    }

    #[test]
    fn linear_resampler_is_exact_on_ramps() {
        let ramp: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let up = LinearResampler.resample(&ramp, 10, 20);
        assert_eq!(up.len(), 200);
        for (j, v) in up.iter().enumerate().take(198) {
            assert!((v - j as f64 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_parsing() {
        assert_eq!("bonafide".parse::<Label>().unwrap(), Label::Genuine);
        assert_eq!("spoof".parse::<Label>().unwrap(), Label::Deepfake);
        assert!("maybe".parse::<Label>().is_err());
    }

    #[test]
    fn delta_t_matches_frame_rate() {
        let e = EmbeddingSequence::new(Array2::zeros((3, 2)), 50).unwrap();
        assert_eq!(e.delta_t(), 0.02);
        assert_eq!(e.delta_t() * f64::from(e.frame_rate()), 1.0);
    }
}
