//! Core of the DAG ledger simulator: ledger, node ranking, committee
//! management, epoch consensus and the discrete-event network.

pub mod consensus;
pub mod crypto;
pub mod experiment;
pub mod hash;
pub mod ledger;
pub mod ranking;
pub mod rng;
pub mod scp;
pub mod simnet;

pub use hash::{Hash, NodeId};
