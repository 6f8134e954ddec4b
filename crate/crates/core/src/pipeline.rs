//! End-to-end detection pipeline: features, fusion, training, Monte-Carlo
//! inference and evaluation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_matrix, FusionTransform, Standardizer, PHYSICS_DIM};
use crate::head::{
    expected_calibration_error, mc_predict_keyed, train, DropoutMlp, McPredictive,
    PredictionRecord, TrainConfig, TrainReport, UncertaintySummary, DEFAULT_MC_PASSES,
};
use crate::metrics::{ecdf_export, metric_report, EcdfTable, MetricReport, ScoreSet, TdcfCosts};
use crate::physics::{physics_vector_with, FeatureRow, PhysicsConfig, PhysicsVector};
use crate::rng;
use crate::signal::{Label, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Share of each labelled class held out for evaluation.
    pub test_fraction: f64,
    pub mc_passes: usize,
    pub physics: PhysicsConfig,
    pub train: TrainConfig,
    pub costs: TdcfCosts,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.3,
            mc_passes: DEFAULT_MC_PASSES,
            physics: PhysicsConfig::default(),
            train: TrainConfig::default(),
            costs: TdcfCosts::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction", "must lie in (0, 1)"));
        }
        if self.mc_passes == 0 {
            return Err(Error::invalid("mc_passes", "must be at least 1"));
        }
        for (field, v) in [("alpha", self.physics.alpha), ("beta", self.physics.beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        self.train.validate()?;
        self.costs.coefficients()?;
        Ok(())
    }
}

/// Per-segment features, sorted by source id: pooled embedding columns and
/// physics columns kept apart until fusion.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub ssl: Array2<f64>,
    pub phys: Array2<f64>,
}

impl FeatureTable {
    pub fn from_segments(segments: &[Segment]) -> Result<Self> {
        Self::from_segments_with(segments, &PhysicsConfig::default())
    }

    pub fn from_segments_with(segments: &[Segment], physics: &PhysicsConfig) -> Result<Self> {
        let mut order: Vec<&Segment> = segments.iter().collect();
        order.sort_by(|a, b| a.source_id().cmp(b.source_id()));
        let d = order.first().map_or(0, |s| s.embedding().dim());
        let rows = order
            .par_iter()
            .map(|s| {
                let pooled = s.embedding().mean_pool();
                if pooled.len() != d {
                    return Err(Error::shape(d, pooled.len()));
                }
                Ok((
                    pooled,
                    physics_vector_with(s.embedding(), s.waveform(), physics)?.to_array(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = rows.len();
        let mut ssl = Array2::zeros((n, d));
        let mut phys = Array2::zeros((n, PHYSICS_DIM));
        for (i, (p, v)) in rows.into_iter().enumerate() {
            ssl.row_mut(i).assign(&Array1::from(p));
            phys.row_mut(i).assign(&Array1::from(v.to_vec()));
        }
        Ok(Self {
            ids: order.iter().map(|s| s.source_id().to_string()).collect(),
            labels: order.iter().map(|s| s.label()).collect(),
            ssl,
            phys,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Pooled embedding columns followed by the physics columns.
    pub fn combined(&self) -> Array2<f64> {
        ndarray::concatenate![Axis(1), self.ssl, self.phys]
    }

    pub fn feature_rows(&self) -> Vec<FeatureRow> {
        (0..self.len())
            .map(|i| {
                let p = self.phys.row(i);
                let v = PhysicsVector::from_array([p[0], p[1], p[2], p[3], p[4], p[5]]);
                FeatureRow::new(self.ids[i].clone(), self.labels[i], &v)
            })
            .collect()
    }

    pub fn keys(&self) -> Vec<u64> {
        self.ids.iter().map(|id| rng::key_of(id)).collect()
    }
}

/// Stratified split: `ceil(n_c · test_fraction)` rows of each labelled class
/// go to the test side; unlabelled rows always do. Both index lists are
/// returned in ascending order.
pub fn stratified_split(
    labels: &[Label],
    test_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::stream(seed, "split");
    let mut train_idx = Vec::new();
    let mut test_idx: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] == Label::Unknown)
        .collect();
    for class in [Label::Genuine, Label::Deepfake] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).ceil() as usize;
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    (train_idx, test_idx)
}

/// Everything needed to score new segments. Fusion basis and network are
/// rounded to single precision, the precision they are stored in, so that
/// scoring from saved files reproduces in-memory results.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub scaler: Standardizer,
    pub transform: FusionTransform,
    pub model: DropoutMlp,
    pub report: TrainReport,
}

impl FittedPipeline {
    pub fn fit(x_raw: ArrayView2<'_, f64>, labels: &[Label], cfg: &TrainConfig) -> Result<Self> {
        let y = labels
            .iter()
            .map(|l| {
                l.class_index()
                    .ok_or(Error::invalid("labels", "training rows must be labelled"))
            })
            .collect::<Result<Vec<_>>>()?;
        let scaler = Standardizer::fit(x_raw);
        let z = scaler.apply(x_raw)?;
        let transform = fuse_matrix(z.view()).transform.quantized();
        let x = transform.apply_rows(z.view())?;
        let (model, report) = train(x.view(), &y, cfg)?;
        Ok(Self {
            scaler,
            transform,
            model: model.quantized(),
            report,
        })
    }

    pub fn fused(&self, x_raw: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.transform.apply_rows(self.scaler.apply(x_raw)?.view())
    }

    pub fn predict(
        &self,
        x_raw: ArrayView2<'_, f64>,
        keys: &[u64],
        mc_passes: usize,
        seed: u64,
    ) -> Result<Vec<McPredictive>> {
        predict_fused(
            &self.model,
            self.fused(x_raw)?.view(),
            keys,
            mc_passes,
            seed,
        )
    }
}

/// MC inference with the run's inference substream.
pub fn predict_fused(
    model: &DropoutMlp,
    x: ArrayView2<'_, f64>,
    keys: &[u64],
    mc_passes: usize,
    seed: u64,
) -> Result<Vec<McPredictive>> {
    mc_predict_keyed(
        model,
        x,
        keys,
        mc_passes,
        rng::derive_seed(seed, "inference"),
    )
}

/// Calibration and uncertainty summary of an evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub mean_epistemic_u: f64,
    pub mean_aleatoric_u: f64,
    pub uncertainty: UncertaintySummary,
}

pub fn scores_of(records: &[PredictionRecord]) -> Result<ScoreSet> {
    let mut genuine = Vec::new();
    let mut fake = Vec::new();
    for r in records {
        match r.label {
            Label::Genuine => genuine.push(r.p_genuine),
            Label::Deepfake => fake.push(r.p_genuine),
            Label::Unknown => {}
        }
    }
    ScoreSet::new(genuine, fake)
}

/// Detection metrics and calibration of labelled prediction records;
/// unlabelled records are ignored.
pub fn evaluate(
    records: &[PredictionRecord],
    costs: &TdcfCosts,
) -> Result<(MetricReport, CalibrationReport)> {
    let metrics = metric_report(&scores_of(records)?, costs)?;
    let labelled: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| r.label.class_index().is_some())
        .collect();
    let labels: Vec<Label> = labelled.iter().map(|r| r.label).collect();
    // A one-sample predictive carries exactly the stored mean probability,
    // which is all the calibration error looks at.
    let means: Vec<McPredictive> = labelled
        .iter()
        .map(|r| McPredictive::from_samples(vec![[r.p_genuine, 1.0 - r.p_genuine]]))
        .collect();
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for r in &labelled {
        let c = r.label.class_index().unwrap_or_default();
        sums[c] += r.total_u;
        counts[c] += 1;
    }
    let n = labelled.len() as f64;
    let calibration = CalibrationReport {
        ece: expected_calibration_error(&means, &labels)?,
        mean_epistemic_u: labelled.iter().map(|r| r.epistemic_u).sum::<f64>() / n,
        mean_aleatoric_u: labelled.iter().map(|r| r.aleatoric_u).sum::<f64>() / n,
        uncertainty: UncertaintySummary::from_means(
            sums[0] / counts[0] as f64,
            sums[1] / counts[1] as f64,
            counts[0],
            counts[1],
        ),
    };
    Ok((metrics, calibration))
}

/// Genuine-against-deepfake ECDF table of one feature column.
pub fn feature_ecdf(rows: &[FeatureRow], column: impl Fn(&FeatureRow) -> f64) -> Result<EcdfTable> {
    let mut g = Vec::new();
    let mut f = Vec::new();
    for r in rows {
        match r.label {
            Label::Genuine => g.push(column(r)),
            Label::Deepfake => f.push(column(r)),
            Label::Unknown => {}
        }
    }
    ecdf_export(&g, &f, ("genuine", "deepfake"))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub features: FeatureTable,
    pub fitted: FittedPipeline,
    /// Test-side rows in source-id order.
    pub predictions: Vec<PredictionRecord>,
    pub metrics: MetricReport,
    pub calibration: CalibrationReport,
    pub ecdf_mean_vel_mag: EcdfTable,
    pub ecdf_tf_variation: EcdfTable,
}

/// Split the table and fit scaler, fusion and classifier on the training
/// side. Returns the fitted pipeline with the train and test row indices.
pub fn fit_on_split(
    features: &FeatureTable,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(FittedPipeline, Vec<usize>, Vec<usize>)> {
    cfg.validate()?;
    let (train_idx, test_idx) = stratified_split(&features.labels, cfg.test_fraction, seed);
    let labels: Vec<Label> = train_idx.iter().map(|&i| features.labels[i]).collect();
    let train_cfg = TrainConfig {
        seed: rng::derive_seed(seed, "train"),
        ..cfg.train.clone()
    };
    let x = features.combined().select(Axis(0), &train_idx);
    let fitted = FittedPipeline::fit(x.view(), &labels, &train_cfg)?;
    Ok((fitted, train_idx, test_idx))
}

pub fn run_pipeline(
    segments: &[Segment],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let features = FeatureTable::from_segments_with(segments, &cfg.physics)?;
    let x = features.combined();
    let (fitted, _, test_idx) = fit_on_split(&features, cfg, seed)?;

    let keys = features.keys();
    let test_keys: Vec<u64> = test_idx.iter().map(|&i| keys[i]).collect();
    let preds = fitted.predict(
        x.select(Axis(0), &test_idx).view(),
        &test_keys,
        cfg.mc_passes,
        seed,
    )?;
    let predictions: Vec<PredictionRecord> = test_idx
        .iter()
        .zip(&preds)
        .map(|(&i, p)| PredictionRecord::new(features.ids[i].clone(), features.labels[i], p))
        .collect();
    let (metrics, calibration) = evaluate(&predictions, &cfg.costs)?;
    let rows = features.feature_rows();
    Ok(PipelineOutput {
        ecdf_mean_vel_mag: feature_ecdf(&rows, |r| r.mean_vel_mag)?,
        ecdf_tf_variation: feature_ecdf(&rows, |r| r.tf_variation)?,
        features,
        fitted,
        predictions,
        metrics,
        calibration,
    })
}
