use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{self, DropoutMlp, TrainConfig};
use crate::rng::{self, Rng};

/// How a client produces its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    /// Adds `strength` times a direction that raises `p_genuine` on a fixed
    /// batch of its own deepfake samples.
    GradientPoisoner {
        strength: f64,
    },
    /// Multiplies the output layer of its updated model by `logit_scale`,
    /// sharpening every prediction.
    CalibrationAttacker {
        logit_scale: f64,
    },
}

impl Behavior {
    pub fn is_attacker(&self) -> bool {
        !matches!(self, Behavior::Honest)
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Behavior::Honest => "honest",
            Behavior::GradientPoisoner { .. } => "gradient_poisoner",
            Behavior::CalibrationAttacker { .. } => "calibration_attacker",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Behavior::Honest => Ok(()),
            Behavior::GradientPoisoner { strength } if strength >= 0.0 && strength.is_finite() => {
                Ok(())
            }
            Behavior::GradientPoisoner { .. } => {
                Err(Error::invalid("strength", "must be non-negative"))
            }
            Behavior::CalibrationAttacker { logit_scale }
                if logit_scale > 0.0 && logit_scale.is_finite() =>
            {
                Ok(())
            }
            Behavior::CalibrationAttacker { .. } => {
                Err(Error::invalid("logit_scale", "must be positive"))
            }
        }
    }
}

/// Local training and attack parameters shared by every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub class_weighting: bool,
    /// Gradient-ascent steps used to find the poisoning direction.
    pub poison_steps: usize,
    pub poison_learning_rate: f64,
    /// Number of the poisoner's own deepfake rows in its target batch.
    pub poison_target_size: usize,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            learning_rate: 0.01,
            batch_size: 16,
            momentum: 0.9,
            class_weighting: true,
            poison_steps: 20,
            poison_learning_rate: 0.05,
            poison_target_size: 32,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        self.train_config(0, 0.0).validate()?;
        if !(self.poison_learning_rate > 0.0 && self.poison_learning_rate.is_finite()) {
            return Err(Error::invalid("poison_learning_rate", "must be positive"));
        }
        if self.poison_target_size == 0 {
            return Err(Error::invalid("poison_target_size", "must be at least 1"));
        }
        Ok(())
    }

    fn train_config(&self, seed: u64, dropout_rate: f64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed,
            dropout_rate,
            class_weighting: self.class_weighting,
            hidden: Vec::new(),
        }
    }
}

/// One participant: a private shard of fused features and its behavior.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub features: Array2<f64>,
    /// Class indices, 0 = genuine, 1 = deepfake.
    pub labels: Vec<usize>,
    pub behavior: Behavior,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        features: Array2<f64>,
        labels: Vec<usize>,
        behavior: Behavior,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyShard(client_id));
        }
        if features.nrows() != labels.len() {
            return Err(Error::shape(features.nrows(), labels.len()));
        }
        behavior.validate()?;
        Ok(Self {
            client_id,
            features,
            labels,
            behavior,
        })
    }

    pub fn shard_size(&self) -> usize {
        self.labels.len()
    }

    fn deepfake_rows(&self, limit: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1)
            .map(|(i, _)| i)
            .take(limit)
            .collect()
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Honest local training from the global weights; returns the weight delta.
fn honest_delta(
    client: &ClientState,
    global: &DropoutMlp,
    cfg: &LocalConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let weights = head::class_weights(&client.labels, cfg.class_weighting).unwrap_or([1.0, 1.0]);
    let mut local = global.clone();
    let tcfg = cfg.train_config(0, global.dropout_rate());
    head::fit(
        &mut local,
        client.features.view(),
        &client.labels,
        weights,
        &tcfg,
        rng,
    )?;
    Ok(sub(&local.to_flat(), &global.to_flat()))
}

/// Displacement after `poison_steps` of full-batch gradient ascent on the
/// mean `log p_genuine` of `target`, starting from `start`.
fn poison_direction(
    start: &DropoutMlp,
    target: ArrayView2<'_, f64>,
    cfg: &LocalConfig,
) -> Vec<f64> {
    let mut model = start.clone();
    let as_genuine = vec![0usize; target.nrows()];
    for _ in 0..cfg.poison_steps {
        let (_, grads) = model.loss_and_grad(target, &as_genuine, [1.0, 1.0], None);
        for (layer, g) in model.layers_mut().iter_mut().zip(&grads) {
            layer
                .weights
                .scaled_add(-cfg.poison_learning_rate, &g.weights);
            layer.bias.scaled_add(-cfg.poison_learning_rate, &g.bias);
        }
    }
    sub(&model.to_flat(), &start.to_flat())
}

/// The update a client submits for this round.
pub fn local_update(
    client: &ClientState,
    global: &DropoutMlp,
    cfg: &LocalConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if client.shard_size() == 0 {
        return Err(Error::EmptyShard(client.client_id));
    }
    let honest = honest_delta(client, global, cfg, rng)?;
    match client.behavior {
        Behavior::Honest => Ok(honest),
        Behavior::GradientPoisoner { strength } => {
            let rows = client.deepfake_rows(cfg.poison_target_size);
            if rows.is_empty() || strength == 0.0 {
                return Ok(honest);
            }
            let target = client.features.select(ndarray::Axis(0), &rows);
            let mut start = global.clone();
            start.set_flat(&add(&global.to_flat(), &honest))?;
            let d = poison_direction(&start, target.view(), cfg);
            Ok(honest
                .iter()
                .zip(&d)
                .map(|(h, d)| h + strength * d)
                .collect())
        }
        Behavior::CalibrationAttacker { logit_scale } => {
            let g = global.to_flat();
            let mut delta = honest;
            // Scaling the updated output layer: γ(g + h) − g = h + (γ − 1)(g + h).
            for i in global.output_layer_range() {
                delta[i] += (logit_scale - 1.0) * (g[i] + delta[i]);
            }
            Ok(delta)
        }
    }
}

/// Model a client would hold after applying its own update.
pub fn apply_delta(global: &DropoutMlp, delta: &[f64]) -> Result<DropoutMlp> {
    let mut m = global.clone();
    m.set_flat(&add(&global.to_flat(), delta))?;
    Ok(m)
}

/// What a client reports about a shared probe set: per-probe total
/// uncertainty of its post-update model, plus mean and std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub client_id: usize,
    pub total_u: Vec<f64>,
    pub mean_total_u: f64,
    pub std_total_u: f64,
}

impl ProbeReport {
    pub fn new(client_id: usize, total_u: Vec<f64>) -> Self {
        let n = total_u.len().max(1) as f64;
        let mean = total_u.iter().sum::<f64>() / n;
        let var = total_u.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / n;
        Self {
            client_id,
            total_u,
            mean_total_u: mean,
            std_total_u: var.sqrt(),
        }
    }
}

/// MC-dropout predictions of `model` on every probe row. Probe `i` draws
/// from substream `i` of `seed`, independent of which client is probed, so
/// identical models produce identical reports.
pub fn probe_model(
    client_id: usize,
    model: &DropoutMlp,
    probes: ArrayView2<'_, f64>,
    n_mc: usize,
    seed: u64,
) -> ProbeReport {
    let preds = head::mc_predict_batch(model, probes, n_mc, rng::derive_seed(seed, "probe"));
    ProbeReport::new(client_id, preds.iter().map(|p| p.total_u).collect())
}

/// Probe each client's post-update model. `updates[i]` is the delta of
/// `clients[i]`.
pub fn probe_clients(
    clients: &[ClientState],
    global: &DropoutMlp,
    updates: &[Vec<f64>],
    probes: ArrayView2<'_, f64>,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<ProbeReport>> {
    if probes.nrows() == 0 {
        return Err(Error::invalid("probe_set", "must not be empty"));
    }
    if clients.len() != updates.len() {
        return Err(Error::shape(clients.len(), updates.len()));
    }
    clients
        .iter()
        .zip(updates)
        .map(|(c, d)| {
            Ok(probe_model(
                c.client_id,
                &apply_delta(global, d)?,
                probes,
                n_mc,
                seed,
            ))
        })
        .collect()
}
