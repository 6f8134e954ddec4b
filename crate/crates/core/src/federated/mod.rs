//! Federated training with uncertainty-based trust screening.
//!
//! Each round every client trains locally from the global weights, reports
//! Monte-Carlo uncertainty of its post-update model on a shared public probe
//! set, and clients whose mean uncertainty deviates from the cohort median by
//! more than `tau` robust standard deviations are excluded from that round's
//! shard-weighted average. Exclusion is per round only.

mod client;
mod scenario;
mod screening;
mod simulation;

pub use client::{
    apply_delta, local_update, probe_clients, probe_model, Behavior, ClientState, LocalConfig,
    ProbeReport,
};
pub use scenario::{Arm, ScenarioConfig};
pub use screening::{mad_screen, median, median_mad, Verdict, DEFAULT_TAU, MAD_NORMAL_CONSISTENCY};
pub use simulation::{
    run_arm, run_simulation, write_round_log, ArmSummary, ClientVerdict, FederatedData,
    RoundOutcome, SimulationResult,
};

use crate::error::{Error, Result};

/// A client's contribution to one aggregation step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedUpdate {
    pub client_id: usize,
    pub shard_size: usize,
    pub delta: Vec<f64>,
}

/// Shard-size weighted mean of the deltas.
///
/// Updates are combined in client-id order with a running mean, so the
/// result does not depend on input order and `{d, d, d}` yields `d` exactly.
pub fn aggregate(updates: &[WeightedUpdate]) -> Result<Vec<f64>> {
    let Some(first) = updates.first() else {
        return Err(Error::RoundAborted(None));
    };
    let dim = first.delta.len();
    if let Some(u) = updates.iter().find(|u| u.delta.len() != dim) {
        return Err(Error::shape(dim, u.delta.len()));
    }
    if let Some(u) = updates.iter().find(|u| u.shard_size == 0) {
        return Err(Error::EmptyShard(u.client_id));
    }
    let mut order: Vec<&WeightedUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let mut mean = vec![0.0; dim];
    let mut seen = 0.0;
    for u in order {
        let w = u.shard_size as f64;
        seen += w;
        let step = w / seen;
        for (m, d) in mean.iter_mut().zip(&u.delta) {
            if d != m {
                *m += step * (d - *m);
            }
        }
    }
    Ok(mean)
}
