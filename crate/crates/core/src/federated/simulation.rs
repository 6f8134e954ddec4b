use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{apply_delta, local_update, probe_model, ClientState, ProbeReport};
use super::scenario::{Arm, ScenarioConfig};
use super::screening::{mad_screen, Verdict};
use super::{aggregate, WeightedUpdate};
use crate::error::{Error, Result};
use crate::fusion::{fuse_matrix, FusionBatch, Standardizer};
use crate::head::{
    class_weights, expected_calibration_error, fit, mc_predict_batch, DropoutMlp, TrainConfig,
    N_CLASSES,
};
use crate::metrics::{eer, ScoreSet};
use crate::physics::physics_vector;
use crate::rng;
use crate::signal::{Label, Segment};
use crate::synth::generate_synthetic;

/// Labelled, not yet fused feature rows (pooled SSL columns then physics
/// columns) from which a scenario draws its probe, holdout and client sets.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub features: Array2<f64>,
    /// 0 = genuine, 1 = deepfake.
    pub labels: Vec<usize>,
}

impl FederatedData {
    pub fn from_segments(segments: &[Segment]) -> Result<Self> {
        let mut labels = Vec::with_capacity(segments.len());
        for s in segments {
            let y = s.label().class_index().ok_or_else(|| {
                Error::invalid("label", format!("segment {} is unlabelled", s.source_id()))
            })?;
            labels.push(y);
        }
        let phys = segments
            .par_iter()
            .map(|s| physics_vector(s).map(|v| v.to_array()))
            .collect::<Result<Vec<_>>>()?;
        let d = segments.first().map_or(0, |s| s.embedding().dim());
        let mut ssl = Array2::zeros((segments.len(), d));
        for (i, s) in segments.iter().enumerate() {
            let pooled = s.embedding().mean_pool();
            if pooled.len() != d {
                return Err(Error::shape(d, pooled.len()));
            }
            ssl.row_mut(i).assign(&ndarray::Array1::from(pooled));
        }
        let z_phys = Array2::from_shape_fn((segments.len(), 6), |(i, j)| phys[i][j]);
        let features = FusionBatch::new(ssl, z_phys)?.combined();
        Ok(Self { features, labels })
    }

    pub fn synthetic(cfg: &ScenarioConfig) -> Result<Self> {
        Self::from_segments(&generate_synthetic(&cfg.corpus)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Trust decision and probe statistics for one client in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientVerdict {
    pub client_id: usize,
    pub behavior: String,
    pub attacker: bool,
    pub shard_size: usize,
    pub mean_total_u: f64,
    pub std_total_u: f64,
    pub verdict: Verdict,
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub arm: Arm,
    pub round: usize,
    pub verdicts: Vec<ClientVerdict>,
    pub n_accepted: usize,
    /// Global-model EER on the held-out set after this round's update.
    pub eer: f64,
    pub ece: f64,
    /// L2 norm of the aggregated update.
    pub update_norm: f64,
    /// L2 norm of the global weights after the update.
    pub weight_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl RoundOutcome {
    pub fn flagged(&self) -> impl Iterator<Item = &ClientVerdict> {
        self.verdicts.iter().filter(|v| v.verdict.is_flagged())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub rounds: usize,
    pub final_eer: f64,
    pub final_ece: f64,
    /// Client-rounds flagged.
    pub flags: usize,
    pub rounds_with_flags: usize,
    /// Share of attacker client-rounds flagged; absent without attackers.
    pub attacker_flag_rate: Option<f64>,
    /// Share of honest client-rounds flagged.
    pub honest_false_flag_rate: Option<f64>,
    /// Flagged client-rounds that were attackers; absent when nothing was flagged.
    pub flag_precision: Option<f64>,
    /// Same as `attacker_flag_rate`.
    pub flag_recall: Option<f64>,
}

impl ArmSummary {
    fn from_rounds(arm: Arm, rounds: &[RoundOutcome]) -> Self {
        let last = rounds.last().expect("at least one round");
        let mut counts = [[0usize; 2]; 2]; // [attacker][flagged]
        let mut rounds_with_flags = 0;
        for r in rounds {
            if r.flagged().next().is_some() {
                rounds_with_flags += 1;
            }
            for v in &r.verdicts {
                counts[usize::from(v.attacker)][usize::from(v.verdict.is_flagged())] += 1;
            }
        }
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let recall = ratio(counts[1][1], counts[1][0] + counts[1][1]);
        Self {
            arm,
            rounds: rounds.len(),
            final_eer: last.eer,
            final_ece: last.ece,
            flags: counts[0][1] + counts[1][1],
            rounds_with_flags,
            attacker_flag_rate: recall,
            honest_false_flag_rate: ratio(counts[0][1], counts[0][0] + counts[0][1]),
            flag_precision: ratio(counts[1][1], counts[0][1] + counts[1][1]),
            flag_recall: recall,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Every arm's rounds, arm by arm.
    pub rounds: Vec<RoundOutcome>,
    pub summaries: Vec<ArmSummary>,
    pub final_models: Vec<(Arm, DropoutMlp)>,
}

impl SimulationResult {
    pub fn summary(&self, arm: Arm) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm)
    }

    pub fn arm_rounds(&self, arm: Arm) -> impl Iterator<Item = &RoundOutcome> {
        self.rounds.iter().filter(move |r| r.arm == arm)
    }
}

/// Fused rows split into the public probe set, the held-out evaluation set
/// and the client shards.
struct Prepared {
    probes: Array2<f64>,
    holdout: Array2<f64>,
    holdout_labels: Vec<Label>,
    shards: Vec<(Array2<f64>, Vec<usize>)>,
    init: DropoutMlp,
}

fn prepare(cfg: &ScenarioConfig, data: &FederatedData) -> Result<Prepared> {
    let mut by_class: [Vec<usize>; N_CLASSES] = Default::default();
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut split_rng = rng::stream(cfg.seed, "flsim-split");
    for idx in &mut by_class {
        idx.shuffle(&mut split_rng);
    }
    let n_probe = [cfg.probe_size / 2, cfg.probe_size - cfg.probe_size / 2];
    let n_hold = [
        cfg.holdout_size / 2,
        cfg.holdout_size - cfg.holdout_size / 2,
    ];
    let mut probe_rows = Vec::new();
    let mut hold_rows = Vec::new();
    let mut client_rows = vec![Vec::new(); cfg.clients];
    for c in 0..N_CLASSES {
        let idx = &by_class[c];
        if idx.len() < n_probe[c] + n_hold[c] + cfg.clients {
            return Err(Error::invalid(
                "corpus",
                "too few segments for the probe set, holdout set and one row of each class per client",
            ));
        }
        probe_rows.extend_from_slice(&idx[..n_probe[c]]);
        hold_rows.extend_from_slice(&idx[n_probe[c]..n_probe[c] + n_hold[c]]);
        for (k, &i) in idx[n_probe[c] + n_hold[c]..].iter().enumerate() {
            client_rows[k % cfg.clients].push(i);
        }
    }

    let rows = |r: &[usize]| data.features.select(Axis(0), r);
    let raw_probes = rows(&probe_rows);
    let scaler = Standardizer::fit(raw_probes.view());
    let transform = fuse_matrix(scaler.apply(raw_probes.view())?.view()).transform;
    let fused = |r: &[usize]| -> Result<Array2<f64>> {
        transform.apply_rows(scaler.apply(rows(r).view())?.view())
    };

    let probes = fused(&probe_rows)?;
    let holdout = fused(&hold_rows)?;
    let holdout_labels = hold_rows
        .iter()
        .map(|&i| {
            if data.labels[i] == 0 {
                Label::Genuine
            } else {
                Label::Deepfake
            }
        })
        .collect();
    let shards = client_rows
        .iter()
        .map(|r| Ok((fused(r)?, r.iter().map(|&i| data.labels[i]).collect())))
        .collect::<Result<Vec<_>>>()?;

    let mut widths = vec![probes.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(N_CLASSES);
    let mut init = DropoutMlp::new(
        &widths,
        cfg.dropout_rate,
        &mut rng::stream(cfg.seed, "flsim-init"),
    )?;
    if cfg.warmup_epochs > 0 {
        let y: Vec<usize> = probe_rows.iter().map(|&i| data.labels[i]).collect();
        let warmup = TrainConfig {
            epochs: cfg.warmup_epochs,
            learning_rate: cfg.local.learning_rate,
            batch_size: cfg.local.batch_size,
            momentum: cfg.local.momentum,
            dropout_rate: cfg.dropout_rate,
            class_weighting: cfg.local.class_weighting,
            ..TrainConfig::default()
        };
        let weights = class_weights(&y, warmup.class_weighting)?;
        fit(
            &mut init,
            probes.view(),
            &y,
            weights,
            &warmup,
            &mut rng::stream(cfg.seed, "flsim-warmup"),
        )?;
    }
    Ok(Prepared {
        probes,
        holdout,
        holdout_labels,
        shards,
        init,
    })
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn screen(cfg: &ScenarioConfig, reports: &[ProbeReport]) -> Result<Vec<Verdict>> {
    let means: Vec<f64> = reports.iter().map(|r| r.mean_total_u).collect();
    let mut verdicts = mad_screen(&means, cfg.tau)?;
    if let Some(t) = cfg.dispersion_tau {
        let stds: Vec<f64> = reports.iter().map(|r| r.std_total_u).collect();
        for (v, d) in verdicts.iter_mut().zip(mad_screen(&stds, t)?) {
            if d.is_flagged() {
                *v = Verdict::Flagged;
            }
        }
    }
    Ok(verdicts)
}

fn evaluate(
    model: &DropoutMlp,
    x: ArrayView2<'_, f64>,
    labels: &[Label],
    n_mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let preds = mc_predict_batch(model, x, n_mc, seed);
    let mut genuine = Vec::new();
    let mut fake = Vec::new();
    for (p, l) in preds.iter().zip(labels) {
        match l {
            Label::Genuine => genuine.push(p.p_genuine()),
            _ => fake.push(p.p_genuine()),
        }
    }
    let (rate, _) = eer(&ScoreSet::new(genuine, fake)?);
    Ok((rate, expected_calibration_error(&preds, labels)?))
}

fn run_prepared(
    cfg: &ScenarioConfig,
    prep: &Prepared,
    arm: Arm,
) -> Result<(Vec<RoundOutcome>, DropoutMlp)> {
    let clients = prep
        .shards
        .iter()
        .enumerate()
        .map(|(id, (x, y))| ClientState::new(id, x.clone(), y.clone(), cfg.behavior(id, arm)))
        .collect::<Result<Vec<_>>>()?;
    let k = clients.len() as u64;
    let mut global = prep.init.clone();
    let mut outcomes = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        // Client streams do not depend on the arm, so the arms share their
        // honest randomness and differ only through the attacks.
        let probe_seed = rng::derive_seed(cfg.seed, &format!("flsim-probe-{round}"));
        let (updates, reports): (Vec<Vec<f64>>, Vec<ProbeReport>) = clients
            .par_iter()
            .map(|c| {
                let mut r = rng::indexed_stream(
                    cfg.seed,
                    "flsim-local",
                    round as u64 * k + c.client_id as u64,
                );
                let delta = local_update(c, &global, &cfg.local, &mut r)?;
                let local = apply_delta(&global, &delta)?;
                let report = probe_model(
                    c.client_id,
                    &local,
                    prep.probes.view(),
                    cfg.mc_passes,
                    probe_seed,
                );
                Ok((delta, report))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();

        let verdicts = if arm.screens() {
            screen(cfg, &reports)?
        } else {
            vec![Verdict::Accepted; clients.len()]
        };
        let accepted: Vec<WeightedUpdate> = clients
            .iter()
            .zip(&updates)
            .zip(&verdicts)
            .filter(|(_, v)| !v.is_flagged())
            .map(|((c, d), _)| WeightedUpdate {
                client_id: c.client_id,
                shard_size: c.shard_size(),
                delta: d.clone(),
            })
            .collect();
        let step = aggregate(&accepted).map_err(|e| match e {
            Error::RoundAborted(_) => Error::RoundAborted(Some(round)),
            other => other,
        })?;
        global = apply_delta(&global, &step)?;

        let eval_seed = rng::derive_seed(cfg.seed, &format!("flsim-holdout-{round}"));
        let (eer, ece) = evaluate(
            &global,
            prep.holdout.view(),
            &prep.holdout_labels,
            cfg.mc_passes,
            eval_seed,
        )?;
        let weights = global.to_flat();
        outcomes.push(RoundOutcome {
            arm,
            round,
            verdicts: clients
                .iter()
                .zip(&reports)
                .zip(&verdicts)
                .map(|((c, r), v)| ClientVerdict {
                    client_id: c.client_id,
                    behavior: c.behavior.tag().to_string(),
                    attacker: c.behavior.is_attacker(),
                    shard_size: c.shard_size(),
                    mean_total_u: r.mean_total_u,
                    std_total_u: r.std_total_u,
                    verdict: *v,
                })
                .collect(),
            n_accepted: accepted.len(),
            eer,
            ece,
            update_norm: l2(&step),
            weight_norm: l2(&weights),
            weights: cfg.log_weights.then_some(weights),
        });
    }
    Ok((outcomes, global))
}

/// Run a single arm of the scenario.
pub fn run_arm(
    cfg: &ScenarioConfig,
    data: &FederatedData,
    arm: Arm,
) -> Result<(Vec<RoundOutcome>, ArmSummary)> {
    cfg.validate()?;
    let prep = prepare(cfg, data)?;
    let (rounds, _) = run_prepared(cfg, &prep, arm)?;
    let summary = ArmSummary::from_rounds(arm, &rounds);
    Ok((rounds, summary))
}

/// Run every arm the scenario requests on the given data.
pub fn run_simulation(cfg: &ScenarioConfig, data: &FederatedData) -> Result<SimulationResult> {
    cfg.validate()?;
    let prep = prepare(cfg, data)?;
    let mut result = SimulationResult {
        rounds: Vec::new(),
        summaries: Vec::new(),
        final_models: Vec::new(),
    };
    for arm in cfg.arms() {
        let (rounds, model) = run_prepared(cfg, &prep, arm)?;
        result.summaries.push(ArmSummary::from_rounds(arm, &rounds));
        result.rounds.extend(rounds);
        result.final_models.push((arm, model));
    }
    Ok(result)
}

pub fn write_round_log<W: Write>(mut w: W, rounds: &[RoundOutcome]) -> Result<()> {
    for r in rounds {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("<round log>", e))?;
    }
    Ok(())
}
