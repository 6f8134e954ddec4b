use serde::{Deserialize, Serialize};

use super::client::{Behavior, LocalConfig};
use super::screening::DEFAULT_TAU;
use crate::error::{Error, Result};
use crate::synth::SyntheticCorpusSpec;

/// Which variant of the federation a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    /// Attackers active, flagged clients excluded.
    Screened,
    /// Attackers active, every update aggregated.
    Unscreened,
    /// Every client honest, every update aggregated.
    Baseline,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Screened => "screened",
            Arm::Unscreened => "unscreened",
            Arm::Baseline => "baseline",
        }
    }

    pub fn screens(self) -> bool {
        self == Arm::Screened
    }

    pub fn has_attackers(self) -> bool {
        self != Arm::Baseline
    }
}

/// A federated experiment. Attackers take the highest client ids,
/// calibration attackers first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub clients: usize,
    pub rounds: usize,
    pub seed: u64,
    pub tau: f64,
    /// Optional second screen on the per-client std of probe uncertainty.
    pub dispersion_tau: Option<f64>,
    pub probe_size: usize,
    pub holdout_size: usize,
    pub mc_passes: usize,
    pub calibration_attackers: usize,
    pub logit_scale: f64,
    pub gradient_poisoners: usize,
    pub poison_strength: f64,
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    /// Epochs the server trains the initial global model on the labelled
    /// public probe set before the first round; 0 starts from random weights.
    pub warmup_epochs: usize,
    /// Run the unscreened and attacker-free arms next to the screened one.
    pub compare_arms: bool,
    /// Include the full global weight vector in every round-log line.
    pub log_weights: bool,
    pub local: LocalConfig,
    pub corpus: SyntheticCorpusSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            rounds: 10,
            seed: 0,
            tau: DEFAULT_TAU,
            dispersion_tau: None,
            probe_size: 64,
            holdout_size: 200,
            mc_passes: 20,
            calibration_attackers: 0,
            logit_scale: 10.0,
            gradient_poisoners: 0,
            poison_strength: 5.0,
            hidden: vec![32, 16],
            dropout_rate: 0.2,
            warmup_epochs: 20,
            compare_arms: true,
            log_weights: false,
            local: LocalConfig::default(),
            corpus: SyntheticCorpusSpec {
                n_genuine: 400,
                n_fake: 400,
                ..SyntheticCorpusSpec::default()
            },
        }
    }
}

impl ScenarioConfig {
    pub fn attackers(&self) -> usize {
        self.calibration_attackers + self.gradient_poisoners
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 3 {
            return Err(Error::invalid(
                "clients",
                "screening needs at least 3 clients",
            ));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be at least 1"));
        }
        if 2 * self.attackers() >= self.clients {
            return Err(Error::invalid(
                "calibration_attackers",
                format!(
                    "{} attackers among {} clients; the attacker fraction must stay below 0.5",
                    self.attackers(),
                    self.clients
                ),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        if let Some(t) = self.dispersion_tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid("dispersion_tau", "must be positive"));
            }
        }
        if self.probe_size < 2 {
            return Err(Error::invalid("probe_size", "need at least 2 probes"));
        }
        if self.holdout_size < 2 {
            return Err(Error::invalid(
                "holdout_size",
                "need at least 2 held-out rows",
            ));
        }
        if self.mc_passes == 0 {
            return Err(Error::invalid("mc_passes", "must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden", "layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate", "must lie in [0, 1)"));
        }
        Behavior::CalibrationAttacker {
            logit_scale: self.logit_scale,
        }
        .validate()?;
        Behavior::GradientPoisoner {
            strength: self.poison_strength,
        }
        .validate()?;
        self.local.validate()?;
        self.corpus.validate()?;
        let per_class = |n: usize| n / 2;
        let reserved_g = per_class(self.probe_size) + per_class(self.holdout_size) + self.clients;
        let reserved_f = (self.probe_size - per_class(self.probe_size))
            + (self.holdout_size - per_class(self.holdout_size))
            + self.clients;
        if self.corpus.n_genuine < reserved_g || self.corpus.n_fake < reserved_f {
            return Err(Error::invalid(
                "corpus",
                "too few segments for the probe set, holdout set and one row of each class per client",
            ));
        }
        Ok(())
    }

    /// Behavior of client `id` in the given arm.
    pub fn behavior(&self, id: usize, arm: Arm) -> Behavior {
        let honest = self.clients - self.attackers();
        if !arm.has_attackers() || id < honest {
            Behavior::Honest
        } else if id < honest + self.calibration_attackers {
            Behavior::CalibrationAttacker {
                logit_scale: self.logit_scale,
            }
        } else {
            Behavior::GradientPoisoner {
                strength: self.poison_strength,
            }
        }
    }

    pub fn arms(&self) -> Vec<Arm> {
        if self.compare_arms {
            vec![Arm::Screened, Arm::Unscreened, Arm::Baseline]
        } else {
            vec![Arm::Screened]
        }
    }
}
