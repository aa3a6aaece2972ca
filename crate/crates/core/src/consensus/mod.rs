//! PBFT agreement among a fixed validator set.
//!
//! Replicas are pure state machines: every handler consumes one input and
//! returns the messages, client replies and timer requests it produces. The
//! network layer decides when those are delivered.

mod message;
mod replica;

pub use message::{
    forge_conflicting, Body, ClientReply, NewViewBody, Outcome, PbftMessage, Phase,
    PreparedCert, Proposal, RejectedTx, ReplicaId, ViewChangeBody,
};
pub use replica::{FaultReport, Mode, Outbound, Replica, Suspicion, SuspicionKind};

use crate::netsim::Time;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusConfig {
    /// Member ids of the validators, indexed by replica id.
    pub validators: Vec<String>,
    pub base_timeout: Time,
    /// How far beyond the last executed sequence number messages are
    /// accepted.
    pub watermark_window: u64,
    pub max_batch: usize,
    /// Capacity of the buffer for messages from future views.
    pub buffer_limit: usize,
}

impl ConsensusConfig {
    pub fn new(validators: Vec<String>) -> Self {
        Self {
            validators,
            base_timeout: 50,
            watermark_window: 256,
            max_batch: 100,
            buffer_limit: 1024,
        }
    }

    pub fn n(&self) -> usize {
        self.validators.len()
    }

    /// Largest number of faults tolerated.
    pub fn f(&self) -> usize {
        max_faults(self.n())
    }
}

pub fn max_faults(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

pub fn primary_of(view: u64, n: usize) -> ReplicaId {
    (view % n as u64) as ReplicaId
}

/// Prepares needed (besides the PrePrepare) for a prepared certificate.
pub fn prepare_quorum(f: usize) -> usize {
    2 * f
}

pub fn commit_quorum(f: usize) -> usize {
    2 * f + 1
}

#[cfg(test)]
mod tests;
