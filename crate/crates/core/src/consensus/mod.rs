//! The epoch state machine: rank-weighted producer election, the faulty-node
//! ratio, ledger-state digests and the simulated world that ties ledger,
//! ranking, session control and network together.

mod digest;
mod election;
mod world;

pub use digest::{quorum_size, state_digest, verify_consistency, ConsistencyVerdict, StateDigest};
pub use election::{elect_producers, liveness_ratio, Liveness, NodePopulation};
pub use world::{default_f, Election, EpochMetrics, Message, World, WorldSpec};

use serde::{Deserialize, Serialize};

use crate::hash::NodeId;
use crate::ledger::{DEFAULT_K_CONF, DEFAULT_MAX_PARENTS};
use crate::ranking::RankParams;
use crate::simnet::DelayModel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConsensusError {
    #[error("no eligible committee member to elect")]
    ElectionFailure,
    #[error("population is empty")]
    EmptyPopulation,
    #[error("node {0} is both honest and malicious")]
    OverlappingPopulation(NodeId),
    #[error("duplicate digest from node {0}")]
    DuplicateDigest(NodeId),
    #[error("committee is not operational: {0}")]
    NonOperational(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpochConfig {
    /// Simulated seconds per epoch.
    pub epoch_length: u64,
    pub producers_per_epoch: usize,
    /// Target spacing between one producer's blocks, in seconds.
    pub block_interval: u64,
    /// Tail of the epoch reserved for digest exchange.
    pub settle_window: u64,
    /// Production jitter is truncated this many seconds before the slot ends.
    pub production_guard: u64,
    pub k_conf: usize,
    pub max_parents: usize,
    pub max_block_txs: usize,
    pub rank: RankParams,
    pub theta_max: f64,
    pub delays: DelayModel,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            epoch_length: 1800,
            producers_per_epoch: 8,
            block_interval: 440,
            settle_window: 40,
            production_guard: 5,
            k_conf: DEFAULT_K_CONF,
            max_parents: DEFAULT_MAX_PARENTS,
            max_block_txs: 64,
            rank: RankParams::default(),
            theta_max: 1.0 / 3.0,
            delays: DelayModel::default(),
        }
    }
}

impl EpochConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        let bad = |m: &str| Err(ConsensusError::InvalidConfig(m.to_string()));
        if self.epoch_length == 0 || self.block_interval == 0 || self.producers_per_epoch == 0 {
            return bad("epoch_length, block_interval and producers_per_epoch must be positive");
        }
        if self.k_conf == 0 || self.max_parents == 0 || self.max_block_txs == 0 {
            return bad("k_conf, max_parents and max_block_txs must be positive");
        }
        if self.production_guard >= self.block_interval {
            return bad("production_guard must be shorter than block_interval");
        }
        if self.slots() == 0 {
            return bad("epoch too short for one block interval plus the settle window");
        }
        if !(self.theta_max > 0.0 && self.theta_max < 1.0) {
            return bad("theta_max must lie in (0, 1)");
        }
        self.rank.weights.validate().map_err(|e| ConsensusError::InvalidConfig(e.to_string()))?;
        if !(self.rank.init_factor > 0.0 && self.rank.init_factor < 1.0) || self.rank.iterations == 0 {
            return bad("init_factor must lie in (0, 1) and iterations must be positive");
        }
        self.delays.validate().map_err(|e| ConsensusError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Production slots per producer per epoch.
    pub fn slots(&self) -> u64 {
        self.epoch_length.saturating_sub(self.settle_window) / self.block_interval
    }
}
