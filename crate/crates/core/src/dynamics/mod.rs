//! Mean-field replicator dynamics and the stochastic agent simulation.

mod agents;
mod replicator;

use serde::{Deserialize, Serialize};

use crate::model::PopulationState;

pub use agents::{
    agent_simulation, agent_simulation_with, AgentMarket, SimulationOutcome, RNG_ALGORITHM,
};
pub use replicator::{
    integrate_to_equilibrium, integrate_with, replicator_step, IntegrationOutcome, MeanField,
    ProtocolKind, RevisionProtocol,
};

/// One recorded point of a trajectory.
///
/// Mean-field runs record every step; agent runs record every
/// `snapshot_cadence` sweeps plus the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Integration step or sweep index.
    pub step: usize,
    /// Elapsed model time (`sum of dt`) or sweeps.
    pub time: f64,
    /// Potential of the state; only defined for single-class games.
    pub potential: Option<f64>,
    /// Share-weighted mean payoff of each class.
    pub mean_payoff: Vec<f64>,
    /// Sup-norm of the replicator velocity, or the L1 histogram change over
    /// the stationarity window for agent runs.
    pub residual: f64,
    /// Full state, present on snapshot steps only.
    pub state: Option<PopulationState>,
}
