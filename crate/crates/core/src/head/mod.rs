//! Dropout classifier head with Monte-Carlo dropout inference.
//!
//! The network is kept stochastic at inference time; averaging the softmax
//! outputs of many dropout masks approximates Bayesian model averaging, and
//! the spread of those outputs splits total predictive entropy into an
//! aleatoric part (mean per-pass entropy) and an epistemic part (mutual
//! information).

mod mc;
mod mlp;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use mc::{
    entropy_bits, expected_calibration_error, mc_predict, mc_predict_batch, mc_predict_keyed,
    mc_predict_with_rng, uncertainty_summary, McPredictive, UncertaintySummary, DEFAULT_MC_PASSES,
    ECE_BINS,
};
pub use mlp::{
    class_weights, fit, softmax2, train, Dense, DropoutMlp, Masks, TrainConfig, TrainReport,
    N_CLASSES,
};

use crate::error::{Error, Result};
use crate::signal::Label;

/// One line of the prediction export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub source_id: String,
    pub label: Label,
    pub p_genuine: f64,
    pub total_u: f64,
    pub aleatoric_u: f64,
    pub epistemic_u: f64,
}

impl PredictionRecord {
    pub fn new(source_id: impl Into<String>, label: Label, p: &McPredictive) -> Self {
        Self {
            source_id: source_id.into(),
            label,
            p_genuine: p.p_genuine(),
            total_u: p.total_u,
            aleatoric_u: p.aleatoric_u,
            epistemic_u: p.epistemic_u,
        }
    }
}

pub fn write_predictions<W: Write>(mut w: W, rows: &[PredictionRecord]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("predictions", e))?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("predictions", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
