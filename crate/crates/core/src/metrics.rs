//! Detection and distribution metrics.
//!
//! Scores are oriented so that higher means more genuine. Threshold-based
//! metrics share one operating-point sweep: accept-all, every midpoint
//! between consecutive distinct scores, reject-all.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub fake: Vec<f64>,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, fake: Vec<f64>) -> Result<Self> {
        if genuine.is_empty() {
            return Err(Error::EmptyClass("genuine"));
        }
        if fake.is_empty() {
            return Err(Error::EmptyClass("deepfake"));
        }
        if genuine.iter().chain(&fake).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(Self { genuine, fake })
    }
}

/// One point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Accept when `score > threshold`. The accept-all and reject-all
    /// extremes carry −∞ and +∞.
    pub threshold: f64,
    /// Fraction of genuine scores rejected.
    pub frr: f64,
    /// Fraction of fake scores accepted.
    pub far: f64,
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Distinct values of the union with per-class multiplicities, ascending.
fn merged_counts(a: &[f64], b: &[f64]) -> Vec<(f64, usize, usize)> {
    let (a, b) = (sorted(a), sorted(b));
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let (i0, j0) = (i, j);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        out.push((v, i - i0, j - j0));
    }
    out
}

pub fn operating_points(scores: &ScoreSet) -> Vec<OperatingPoint> {
    let counts = merged_counts(&scores.genuine, &scores.fake);
    let ng = scores.genuine.len() as f64;
    let nf = scores.fake.len() as f64;
    let mut points = Vec::with_capacity(counts.len() + 1);
    points.push(OperatingPoint {
        threshold: f64::NEG_INFINITY,
        frr: 0.0,
        far: 1.0,
    });
    let (mut g_below, mut f_below) = (0usize, 0usize);
    for (k, &(v, gc, fc)) in counts.iter().enumerate() {
        g_below += gc;
        f_below += fc;
        let threshold = match counts.get(k + 1) {
            Some(&(next, _, _)) => 0.5 * (v + next),
            None => f64::INFINITY,
        };
        points.push(OperatingPoint {
            threshold,
            frr: g_below as f64 / ng,
            far: (nf - f_below as f64) / nf,
        });
    }
    points
}

/// Equal error rate and its threshold, linearly interpolated between the
/// two operating points where FRR first meets or exceeds FAR. Infinite
/// sweep endpoints are reported as the extreme observed score.
pub fn eer(scores: &ScoreSet) -> (f64, f64) {
    let points = operating_points(scores);
    let lo_score = scores
        .genuine
        .iter()
        .chain(&scores.fake)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi_score = scores
        .genuine
        .iter()
        .chain(&scores.fake)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let finite = |t: f64| {
        if t == f64::NEG_INFINITY {
            lo_score
        } else if t == f64::INFINITY {
            hi_score
        } else {
            t
        }
    };
    let j = points
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("reject-all point always has frr >= far");
    let (p0, p1) = (points[j - 1], points[j]);
    let d0 = p0.far - p0.frr;
    let d1 = p1.far - p1.frr;
    let alpha = if d0 - d1 > 0.0 { d0 / (d0 - d1) } else { 1.0 };
    let rate = p0.frr + alpha * (p1.frr - p0.frr);
    let (t0, t1) = (finite(p0.threshold), finite(p1.threshold));
    (rate, t0 + alpha * (t1 - t0))
}

/// Mann–Whitney U / (n_g n_f), ties counted one half.
pub fn roc_auc(scores: &ScoreSet) -> f64 {
    let counts = merged_counts(&scores.genuine, &scores.fake);
    let mut fake_below = 0usize;
    let mut u = 0.0;
    for (_, gc, fc) in counts {
        u += gc as f64 * (fake_below as f64 + 0.5 * fc as f64);
        fake_below += fc;
    }
    u / (scores.genuine.len() as f64 * scores.fake.len() as f64)
}

/// Tandem detection cost parameters. The automatic speaker verification
/// (ASV) error rates stand in for a fixed ASV system in front of the
/// countermeasure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdcfCosts {
    pub prior_target: f64,
    pub prior_nontarget: f64,
    pub prior_spoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfCosts {
    fn default() -> Self {
        Self {
            prior_target: 0.9405,
            prior_nontarget: 0.0095,
            prior_spoof: 0.05,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.025,
            p_fa_asv: 0.025,
            p_miss_spoof_asv: 0.4,
        }
    }
}

impl TdcfCosts {
    /// Weights `(C1, C2)` of the countermeasure miss and false-alarm rates.
    pub fn coefficients(&self) -> Result<(f64, f64)> {
        let priors = [self.prior_target, self.prior_nontarget, self.prior_spoof];
        if priors.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::BadCosts("priors must lie in (0, 1)".into()));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::BadCosts("priors must sum to 1".into()));
        }
        let costs = [self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm];
        if costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::BadCosts("costs must be positive".into()));
        }
        let rates = [self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::BadCosts("ASV error rates must lie in [0, 1]".into()));
        }
        let c1 = self.prior_target * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
            - self.prior_nontarget * self.c_fa_asv * self.p_fa_asv;
        let c2 = self.c_fa_cm * self.prior_spoof * (1.0 - self.p_miss_spoof_asv);
        if c1 <= 0.0 || c2 <= 0.0 {
            return Err(Error::BadCosts(format!(
                "degenerate cost weights C1 = {c1}, C2 = {c2}"
            )));
        }
        Ok((c1, c2))
    }
}

/// Minimum over the sweep of `(C1·P_miss + C2·P_fa) / min(C1, C2)`; the
/// normalization makes the better of accept-all and reject-all cost 1.
pub fn min_tdcf(scores: &ScoreSet, costs: &TdcfCosts) -> Result<f64> {
    let (c1, c2) = costs.coefficients()?;
    let norm = c1.min(c2);
    Ok(operating_points(scores)
        .iter()
        .map(|p| (c1 * p.frr + c2 * p.far) / norm)
        .fold(f64::INFINITY, f64::min))
}

/// Two-sample Kolmogorov–Smirnov statistic and the value where the largest
/// ECDF gap first occurs.
pub fn ks_with_location(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut ca, mut cb) = (0usize, 0usize);
    let (mut best, mut at) = (0.0, f64::NAN);
    for (v, ka, kb) in merged_counts(a, b) {
        ca += ka;
        cb += kb;
        let gap = (ca as f64 / na - cb as f64 / nb).abs();
        if gap > best || at.is_nan() {
            best = gap;
            at = v;
        }
    }
    (best, at)
}

pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(
        !a.is_empty() && !b.is_empty(),
        "KS distance needs two non-empty samples"
    );
    ks_with_location(a, b).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcdfRow {
    pub value: f64,
    pub ecdf_a: f64,
    pub ecdf_b: f64,
    /// 1 on the row where the KS gap is attained, else 0.
    pub ks_max: u8,
}

/// Both ECDFs evaluated at every jump point of either sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfTable {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<EcdfRow>,
}

pub fn ecdf_export(a: &[f64], b: &[f64], labels: (&str, &str)) -> Result<EcdfTable> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(
            "samples",
            "ECDF export needs two non-empty samples",
        ));
    }
    let (_, at) = ks_with_location(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut ca, mut cb) = (0usize, 0usize);
    let rows = merged_counts(a, b)
        .into_iter()
        .map(|(v, ka, kb)| {
            ca += ka;
            cb += kb;
            EcdfRow {
                value: v,
                ecdf_a: ca as f64 / na,
                ecdf_b: cb as f64 / nb,
                ks_max: u8::from(v == at),
            }
        })
        .collect();
    Ok(EcdfTable {
        label_a: labels.0.to_string(),
        label_b: labels.1.to_string(),
        rows,
    })
}

impl EcdfTable {
    pub fn ks(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.ecdf_a - r.ecdf_b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record([
            "value".to_string(),
            format!("ecdf_{}", self.label_a),
            format!("ecdf_{}", self.label_b),
            "ks_max".to_string(),
        ])?;
        for r in &self.rows {
            wtr.serialize(r)?;
        }
        wtr.flush().map_err(|e| Error::io("ecdf csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let strip = |i: usize| {
            headers
                .get(i)
                .map(|h| h.trim_start_matches("ecdf_").to_string())
                .unwrap_or_default()
        };
        let (label_a, label_b) = (strip(1), strip(2));
        let rows = rdr
            .records()
            .map(|rec| {
                let rec = rec?;
                Ok(rec.deserialize::<EcdfRow>(None)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label_a,
            label_b,
            rows,
        })
    }
}

/// The metric report emitted by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub roc_auc: f64,
    pub min_tdcf: f64,
    pub n_genuine: usize,
    pub n_fake: usize,
}

pub fn metric_report(scores: &ScoreSet, costs: &TdcfCosts) -> Result<MetricReport> {
    let (eer, eer_threshold) = eer(scores);
    Ok(MetricReport {
        eer,
        eer_threshold,
        roc_auc: roc_auc(scores),
        min_tdcf: min_tdcf(scores, costs)?,
        n_genuine: scores.genuine.len(),
        n_fake: scores.fake.len(),
    })
}
