use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale factor that makes the MAD a consistent estimator of the standard
/// deviation under normality.
pub const MAD_NORMAL_CONSISTENCY: f64 = 1.4826;
pub const DEFAULT_TAU: f64 = 3.0;
const DEGENERATE_MAD: f64 = 1e-12;
const DEGENERATE_DEVIATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Flagged,
}

impl Verdict {
    pub fn is_flagged(self) -> bool {
        self == Verdict::Flagged
    }
}

/// Median with the midpoint rule for even counts. Panics on empty input.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(median, MAD)` of the values.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    (m, median(&dev))
}

/// Flag every value whose distance from the median exceeds
/// `tau · 1.4826 · MAD`. When the MAD collapses to zero, any deviation
/// above 1e-6 is flagged instead.
pub fn mad_screen(values: &[f64], tau: f64) -> Result<Vec<Verdict>> {
    if values.len() < 3 {
        return Err(Error::TooFewClients(values.len()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", "must be positive"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("screening statistic"));
    }
    let (m, mad) = median_mad(values);
    let limit = if mad < DEGENERATE_MAD {
        DEGENERATE_DEVIATION
    } else {
        tau * MAD_NORMAL_CONSISTENCY * mad
    };
    Ok(values
        .iter()
        .map(|v| {
            if (v - m).abs() > limit {
                Verdict::Flagged
            } else {
                Verdict::Accepted
            }
        })
        .collect())
}
