//! Interpretable physics features of an embedding trajectory and its waveform.
//!
//! The embedding sequence is treated as a trajectory sampled every `Δt`
//! seconds. From it we derive a translational shift (speed plus half the
//! change of speed), a vibrational shift (spread of the dominant oscillation
//! bin across dimensions), and a rotational shift (mean parallelogram area
//! spanned by consecutive velocity and velocity-change vectors). The waveform
//! contributes its dynamic range in dB.

use std::io::Write;

use ndarray::{Array2, ArrayView1, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{EmbeddingSequence, Segment, Waveform};

/// Normalization constant of the vibrational shift.
pub const ALPHA: f64 = 0.01;
/// Scale of the rotational shift.
pub const BETA: f64 = 0.1;
/// Floor on the 10th-percentile amplitude in the dynamic-range ratio.
pub const PERCENTILE_FLOOR: f64 = 1e-8;

pub const FEATURE_NAMES: [&str; 6] = [
    "delta_f_t",
    "delta_f_v",
    "delta_f_r",
    "r_dyn",
    "mean_vel_mag",
    "tf_variation",
];

/// First and second finite differences of an embedding sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsDerivatives {
    /// (T−1)×D, embedding units per second.
    pub velocities: Array2<f64>,
    /// (T−2)×D, embedding units per second squared.
    pub accelerations: Array2<f64>,
    pub delta_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsVector {
    pub delta_f_t: f64,
    pub delta_f_v: f64,
    pub delta_f_r: f64,
    pub r_dyn: f64,
    pub mean_velocity_magnitude: f64,
    pub temporal_frequency_variation: f64,
}

impl PhysicsVector {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.delta_f_t,
            self.delta_f_v,
            self.delta_f_r,
            self.r_dyn,
            self.mean_velocity_magnitude,
            self.temporal_frequency_variation,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            delta_f_t: a[0],
            delta_f_v: a[1],
            delta_f_r: a[2],
            r_dyn: a[3],
            mean_velocity_magnitude: a[4],
            temporal_frequency_variation: a[5],
        }
    }
}

/// Tunable constants; defaults are `ALPHA` and `BETA`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            alpha: ALPHA,
            beta: BETA,
        }
    }
}

fn require_frames(e: &EmbeddingSequence, needed: usize) -> Result<()> {
    if e.len() < needed {
        return Err(Error::SequenceTooShort {
            needed,
            actual: e.len(),
        });
    }
    Ok(())
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

pub fn kinematics(e: &EmbeddingSequence) -> Result<KinematicsDerivatives> {
    require_frames(e, 3)?;
    let dt = e.delta_t();
    let frames = e.frames();
    let t = frames.nrows();
    let velocities =
        (&frames.slice(ndarray::s![1.., ..]) - &frames.slice(ndarray::s![..t - 1, ..])) / dt;
    let accelerations = (&velocities.slice(ndarray::s![1.., ..])
        - &velocities.slice(ndarray::s![..t - 2, ..]))
        / dt;
    Ok(KinematicsDerivatives {
        velocities,
        accelerations,
        delta_t: dt,
    })
}

/// Mean velocity norm plus half the mean acceleration norm.
pub fn translational_shift(k: &KinematicsDerivatives) -> f64 {
    mean_velocity_magnitude(k) + 0.5 * mean(k.accelerations.rows().into_iter().map(norm))
}

pub fn mean_velocity_magnitude(k: &KinematicsDerivatives) -> f64 {
    mean(k.velocities.rows().into_iter().map(norm))
}

/// Hann window, symmetric form `0.5 − 0.5 cos(2πn / (T−1))`.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / m).cos())
        .collect()
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-dimension index of the strongest non-DC bin of the one-sided power
/// spectrum of the Hann-windowed trajectory. Ties go to the lowest bin.
pub fn dominant_bins(e: &EmbeddingSequence) -> Result<Vec<usize>> {
    require_frames(e, 4)?;
    let t = e.len();
    let window = hann(t);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(t);
    let mut buf = vec![Complex::new(0.0, 0.0); t];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let half = t / 2;
    let bins = e
        .frames()
        .axis_iter(Axis(1))
        .map(|col| {
            for ((b, x), w) in buf.iter_mut().zip(col.iter()).zip(&window) {
                *b = Complex::new(x * w, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            let mut best = 1;
            let mut best_power = buf[1].norm_sqr();
            for (bin, c) in buf.iter().enumerate().take(half + 1).skip(2) {
                let p = c.norm_sqr();
                if p > best_power {
                    best = bin;
                    best_power = p;
                }
            }
            best
        })
        .collect();
    Ok(bins)
}

/// `alpha` times the population std of the dominant bins across dimensions.
pub fn vibrational_shift(e: &EmbeddingSequence, alpha: f64) -> Result<f64> {
    let bins: Vec<f64> = dominant_bins(e)?.into_iter().map(|b| b as f64).collect();
    Ok(alpha * population_std(&bins))
}

/// Magnitude of the generalized cross product, `sqrt(|u|²|w|² − (u·w)²)`.
///
/// Results below the rounding noise of the two products are clamped to zero,
/// so collinear pairs give exactly 0.
pub fn cross_magnitude(u: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>) -> f64 {
    let uu = u.dot(&u);
    let ww = w.dot(&w);
    let uw = u.dot(&w);
    let scale = uu * ww;
    let gram = scale - uw * uw;
    if gram <= 8.0 * f64::EPSILON * scale {
        0.0
    } else {
        gram.sqrt()
    }
}

/// `beta` times the mean cross magnitude of `(v_i, v_{i+1} − v_i)` over all
/// consecutive velocity pairs.
pub fn rotational_shift(k: &KinematicsDerivatives, beta: f64) -> Result<f64> {
    let n = k.velocities.nrows();
    if n < 3 {
        return Err(Error::SequenceTooShort {
            needed: 4,
            actual: n + 1,
        });
    }
    let total: f64 = (0..n - 1)
        .map(|i| {
            let v = k.velocities.row(i);
            let dv = &k.velocities.row(i + 1) - &v;
            cross_magnitude(v, dv.view())
        })
        .sum();
    Ok(beta * total / (n - 1) as f64)
}

/// Linear-interpolation percentile (`q` in [0, 1]) without a full sort.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut lo_val, upper) = v.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

/// `20·log10(max|x| / Q₀.₁(|x|))` dB with the percentile floored at 1e-8.
/// An all-zero waveform yields 0 dB.
pub fn dynamic_range(w: &Waveform) -> f64 {
    let abs: Vec<f64> = w.samples().iter().map(|s| s.abs()).collect();
    let peak = abs.iter().copied().fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let q = percentile(&abs, 0.1).max(PERCENTILE_FLOOR);
    (20.0 * (peak / q).log10()).max(0.0)
}

/// Coefficient of variation (population std / mean) of the frame-to-frame
/// step lengths `|E_{i+1} − E_i|`. Zero for a motionless trajectory.
pub fn temporal_frequency_variation(k: &KinematicsDerivatives) -> f64 {
    let steps: Vec<f64> = k
        .velocities
        .rows()
        .into_iter()
        .map(|v| norm(v) * k.delta_t)
        .collect();
    let m = steps.iter().sum::<f64>() / steps.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    population_std(&steps) / m
}

pub fn physics_vector(seg: &Segment) -> Result<PhysicsVector> {
    physics_vector_with(seg.embedding(), seg.waveform(), &PhysicsConfig::default())
}

pub fn physics_vector_with(
    e: &EmbeddingSequence,
    w: &Waveform,
    cfg: &PhysicsConfig,
) -> Result<PhysicsVector> {
    require_frames(e, 4)?;
    let k = kinematics(e)?;
    let v = PhysicsVector {
        delta_f_t: translational_shift(&k),
        delta_f_v: vibrational_shift(e, cfg.alpha)?,
        delta_f_r: rotational_shift(&k, cfg.beta)?,
        r_dyn: dynamic_range(w),
        mean_velocity_magnitude: mean_velocity_magnitude(&k),
        temporal_frequency_variation: temporal_frequency_variation(&k),
    };
    if v.to_array().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("physics vector"));
    }
    Ok(v)
}

/// One row of the exported feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub source_id: String,
    pub label: crate::signal::Label,
    pub delta_f_t: f64,
    pub delta_f_v: f64,
    pub delta_f_r: f64,
    pub r_dyn: f64,
    pub mean_vel_mag: f64,
    pub tf_variation: f64,
}

impl FeatureRow {
    pub fn new(
        source_id: impl Into<String>,
        label: crate::signal::Label,
        v: &PhysicsVector,
    ) -> Self {
        Self {
            source_id: source_id.into(),
            label,
            delta_f_t: v.delta_f_t,
            delta_f_v: v.delta_f_v,
            delta_f_r: v.delta_f_r,
            r_dyn: v.r_dyn,
            mean_vel_mag: v.mean_velocity_magnitude,
            tf_variation: v.temporal_frequency_variation,
        }
    }

    pub fn vector(&self) -> PhysicsVector {
        PhysicsVector::from_array([
            self.delta_f_t,
            self.delta_f_v,
            self.delta_f_r,
            self.r_dyn,
            self.mean_vel_mag,
            self.tf_variation,
        ])
    }
}

/// Write the feature table as CSV; the header is emitted even for no rows.
pub fn write_feature_csv<W: Write>(out: W, rows: &[FeatureRow]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    wtr.write_record([
        "source_id",
        "label",
        "delta_f_t",
        "delta_f_v",
        "delta_f_r",
        "r_dyn",
        "mean_vel_mag",
        "tf_variation",
    ])?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io("feature csv", e))?;
    Ok(())
}

pub fn read_feature_csv<R: std::io::Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
