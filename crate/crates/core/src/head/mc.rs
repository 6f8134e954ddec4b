use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{softmax2, DropoutMlp};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::signal::Label;

pub const DEFAULT_MC_PASSES: usize = 50;
pub const ECE_BINS: usize = 10;

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn entropy_bits(p: [f64; 2]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Monte-Carlo predictive distribution for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct McPredictive {
    /// Per-pass `(p_genuine, p_fake)`.
    pub samples: Vec<[f64; 2]>,
    pub mean_p: [f64; 2],
    /// Entropy of the mean prediction (bits).
    pub total_u: f64,
    /// Mean per-pass entropy (bits).
    pub aleatoric_u: f64,
    /// `total_u − aleatoric_u`, the mutual information term.
    pub epistemic_u: f64,
}

impl McPredictive {
    pub fn from_samples(samples: Vec<[f64; 2]>) -> Self {
        assert!(
            !samples.is_empty(),
            "at least one Monte-Carlo sample is required"
        );
        let first = samples[0];
        if samples.iter().all(|s| *s == first) {
            let h = entropy_bits(first);
            return Self {
                samples,
                mean_p: first,
                total_u: h,
                aleatoric_u: h,
                epistemic_u: 0.0,
            };
        }
        let n = samples.len() as f64;
        let g = samples.iter().map(|s| s[0]).sum::<f64>() / n;
        let mean_p = [g, 1.0 - g];
        let total_u = entropy_bits(mean_p);
        let aleatoric_u = samples.iter().map(|s| entropy_bits(*s)).sum::<f64>() / n;
        // Jensen guarantees total ≥ aleatoric; only rounding can violate it.
        let epistemic_u = (total_u - aleatoric_u).max(0.0);
        Self {
            samples,
            mean_p,
            total_u,
            aleatoric_u: aleatoric_u.min(total_u),
            epistemic_u,
        }
    }

    pub fn p_genuine(&self) -> f64 {
        self.mean_p[0]
    }

    /// Predicted class index (ties go to genuine).
    pub fn predicted_class(&self) -> usize {
        usize::from(self.mean_p[1] > self.mean_p[0])
    }

    pub fn confidence(&self) -> f64 {
        self.mean_p[0].max(self.mean_p[1])
    }
}

/// `n` stochastic passes with freshly drawn dropout masks.
pub fn mc_predict_with_rng(
    model: &DropoutMlp,
    x: ArrayView1<'_, f64>,
    n: usize,
    rng: &mut Rng,
) -> McPredictive {
    assert!(n >= 1, "number of passes must be at least 1");
    let samples = (0..n)
        .map(|_| {
            let masks = model.sample_masks(rng);
            softmax2(model.logits(x, Some(&masks)).view())
        })
        .collect();
    McPredictive::from_samples(samples)
}

pub fn mc_predict(model: &DropoutMlp, x: ArrayView1<'_, f64>, n: usize, seed: u64) -> McPredictive {
    mc_predict_with_rng(model, x, n, &mut rng::stream(seed, "mc-dropout"))
}

/// MC inference over rows of `x`; row `i` uses its own indexed substream,
/// so the result does not depend on scheduling.
pub fn mc_predict_batch(
    model: &DropoutMlp,
    x: ArrayView2<'_, f64>,
    n: usize,
    seed: u64,
) -> Vec<McPredictive> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::indexed_stream(seed, "mc-dropout", i as u64);
            mc_predict_with_rng(model, x.row(i), n, &mut rng)
        })
        .collect()
}

/// MC inference where row `i` draws from the substream indexed by
/// `keys[i]`, so a row's result depends only on its key and not on which
/// other rows share the batch.
pub fn mc_predict_keyed(
    model: &DropoutMlp,
    x: ArrayView2<'_, f64>,
    keys: &[u64],
    n: usize,
    seed: u64,
) -> Result<Vec<McPredictive>> {
    if keys.len() != x.nrows() {
        return Err(Error::shape(x.nrows(), keys.len()));
    }
    Ok(keys
        .par_iter()
        .enumerate()
        .map(|(i, &key)| {
            let mut rng = rng::indexed_stream(seed, "mc-dropout", key);
            mc_predict_with_rng(model, x.row(i), n, &mut rng)
        })
        .collect())
}

/// Expected calibration error over 10 equal-width confidence bins using the
/// max-probability confidence. Rows labelled `Unknown` are skipped.
pub fn expected_calibration_error(preds: &[McPredictive], labels: &[Label]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape(preds.len(), labels.len()));
    }
    let mut count = [0usize; ECE_BINS];
    let mut correct = [0.0f64; ECE_BINS];
    let mut conf = [0.0f64; ECE_BINS];
    let mut n = 0usize;
    for (p, label) in preds.iter().zip(labels) {
        let Some(y) = label.class_index() else {
            continue;
        };
        let c = p.confidence();
        let b = ((c * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        count[b] += 1;
        conf[b] += c;
        if p.predicted_class() == y {
            correct[b] += 1.0;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("labels", "no labelled predictions"));
    }
    Ok((0..ECE_BINS)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            (nb / n as f64) * (correct[b] / nb - conf[b] / nb).abs()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub genuine_mean_total_u: f64,
    pub fake_mean_total_u: f64,
    /// `(fake − genuine) / genuine`.
    pub relative_gap: f64,
    pub n_genuine: usize,
    pub n_fake: usize,
}

impl UncertaintySummary {
    pub fn from_means(genuine: f64, fake: f64, n_genuine: usize, n_fake: usize) -> Self {
        let relative_gap = if genuine > 0.0 {
            (fake - genuine) / genuine
        } else {
            0.0
        };
        Self {
            genuine_mean_total_u: genuine,
            fake_mean_total_u: fake,
            relative_gap,
            n_genuine,
            n_fake,
        }
    }
}

/// Per-class mean total uncertainty and the relative fake-vs-genuine gap.
pub fn uncertainty_summary(preds: &[McPredictive], labels: &[Label]) -> Result<UncertaintySummary> {
    if preds.len() != labels.len() {
        return Err(Error::shape(preds.len(), labels.len()));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (p, l) in preds.iter().zip(labels) {
        if let Some(c) = l.class_index() {
            sums[c] += p.total_u;
            counts[c] += 1;
        }
    }
    if counts[0] == 0 {
        return Err(Error::EmptyClass("genuine"));
    }
    if counts[1] == 0 {
        return Err(Error::EmptyClass("deepfake"));
    }
    Ok(UncertaintySummary::from_means(
        sums[0] / counts[0] as f64,
        sums[1] / counts[1] as f64,
        counts[0],
        counts[1],
    ))
}
