//! Physics-guided deepfake speech detection.
//!
//! Kinematic features of self-supervised embedding trajectories are fused
//! with the pooled embedding through an orthogonal projection and scored by
//! a Monte-Carlo dropout classifier whose predictive uncertainty also drives
//! trust screening in a simulated federation.
//!
//! Score orientation is fixed across the crate: higher means more genuine.

pub mod error;
pub mod federated;
pub mod fusion;
pub mod head;
pub mod io;
pub mod metrics;
pub mod physics;
pub mod pipeline;
pub mod qr;
pub mod rng;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use fusion::{fuse, fuse_matrix, FusedBatch, FusionBatch, FusionTransform, Standardizer};
pub use head::{
    mc_predict, mc_predict_batch, train, DropoutMlp, McPredictive, PredictionRecord, TrainConfig,
};
pub use metrics::{
    eer, ks_distance, metric_report, min_tdcf, roc_auc, MetricReport, ScoreSet, TdcfCosts,
};
pub use physics::{physics_vector, FeatureRow, PhysicsVector};
pub use signal::{EmbeddingSequence, Label, Segment, Waveform};
pub use synth::{generate_synthetic, SyntheticCorpusSpec};
