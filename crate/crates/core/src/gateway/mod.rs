//! Gateway node: authenticates device submissions, classifies the flow
//! that came with each one, and endorses either the original transaction
//! or an alert toward consensus.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::consensus::{ClientReply, Outcome, ReplicaId};
use crate::ids_data::FeatureSchema;
use crate::ids_models::{load_model, ClassifierModel, ModelError};
use crate::ledger::{Digest, Payload, Transaction, Value};
use crate::membership::{MembershipRegistry, Signer};
use crate::netsim::Time;

pub const BENIGN: &str = "Benign";

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("no model loaded")]
    ModelMissing,
    #[error("flow does not fit the model: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    #[default]
    AlertAndQuarantine,
    AlertOnly,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::AlertAndQuarantine => "alert-and-quarantine",
            Policy::AlertOnly => "alert-only",
        }
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alert-and-quarantine" => Ok(Policy::AlertAndQuarantine),
            "alert-only" => Ok(Policy::AlertOnly),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub class_index: usize,
    pub class_name: String,
    pub is_malicious: bool,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Forward,
    Alert,
    AuthFailed,
    ModelError,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::Alert => "alert",
            Action::AuthFailed => "auth_failed",
            Action::ModelError => "model_error",
        }
    }
}

/// What `handle_submission` endorsed.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    ForwardToConsensus(Transaction),
    AlertRaised(Transaction),
}

impl Decision {
    pub fn tx(&self) -> &Transaction {
        match self {
            Decision::ForwardToConsensus(t) | Decision::AlertRaised(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub time: Time,
    pub device: String,
    pub verdict: Option<Verdict>,
    pub action: Action,
    /// Transaction endorsed toward consensus, if any.
    pub endorsed: Option<Digest>,
    /// Final result once f+1 replicas agree.
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone)]
struct InFlight {
    record: usize,
    replies: BTreeMap<ReplicaId, Outcome>,
}

#[derive(Debug, Clone)]
pub struct GatewayNode {
    signer: Signer,
    registry: Arc<MembershipRegistry>,
    model: Option<Arc<ClassifierModel>>,
    /// Column layout of flows emitted by devices.
    input: FeatureSchema,
    /// Positions of the model's features in `input`, computed on load.
    projection: Result<Vec<usize>, String>,
    devices: BTreeSet<String>,
    policy: Policy,
    reply_quorum: usize,
    nonce: u64,
    pending: VecDeque<Transaction>,
    in_flight: BTreeMap<Digest, InFlight>,
    log: Vec<DecisionRecord>,
}

impl GatewayNode {
    /// `reply_quorum` is f+1: a result is accepted once that many replicas
    /// report the same outcome.
    pub fn new(
        signer: Signer,
        registry: Arc<MembershipRegistry>,
        input: FeatureSchema,
        devices: impl IntoIterator<Item = String>,
        policy: Policy,
        reply_quorum: usize,
    ) -> Self {
        Self {
            signer,
            registry,
            model: None,
            input,
            projection: Err("no model".into()),
            devices: devices.into_iter().collect(),
            policy,
            reply_quorum,
            nonce: 0,
            pending: VecDeque::new(),
            in_flight: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        self.signer.id()
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn model(&self) -> Option<&ClassifierModel> {
        self.model.as_deref()
    }

    pub fn devices(&self) -> &BTreeSet<String> {
        &self.devices
    }

    pub fn log(&self) -> &[DecisionRecord] {
        &self.log
    }

    pub fn set_model(&mut self, model: Arc<ClassifierModel>) {
        self.projection = model
            .schema
            .names
            .iter()
            .map(|n| self.input.position(n).ok_or_else(|| n.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|missing| format!("feature `{missing}` absent from flow records"));
        self.model = Some(model);
    }

    /// Replaces the active model; on error the previous one stays active.
    pub fn load_model(&mut self, bytes: &[u8]) -> Result<(), ModelError> {
        let model = load_model(bytes)?;
        self.set_model(Arc::new(model));
        Ok(())
    }

    pub fn inspect_flow(&self, flow: &[f64]) -> Result<Verdict, GatewayError> {
        let model = self.model.as_ref().ok_or(GatewayError::ModelMissing)?;
        let cols = self.projection.as_ref().map_err(|e| GatewayError::SchemaMismatch(e.clone()))?;
        if flow.len() != self.input.len() {
            return Err(GatewayError::SchemaMismatch(format!(
                "flow has {} values, expected {}",
                flow.len(),
                self.input.len()
            )));
        }
        let row: Vec<f64> = cols.iter().map(|&c| flow[c]).collect();
        let p = model
            .predict(&model.schema, &row)
            .map_err(|e| GatewayError::SchemaMismatch(e.to_string()))?;
        let class_name = model.labels.name(p.class).to_string();
        Ok(Verdict {
            class_index: p.class,
            is_malicious: class_name != BENIGN,
            probability: p.probabilities[p.class],
            class_name,
        })
    }

    fn authenticate(&self, tx: &Transaction) -> Result<(), GatewayError> {
        if !self.devices.contains(&tx.submitter) {
            return Err(GatewayError::AuthFailed(format!(
                "`{}` is not registered to {}",
                tx.submitter,
                self.id()
            )));
        }
        if !matches!(tx.payload, Payload::SensorUpdate { .. }) || !tx.id_matches() {
            return Err(GatewayError::AuthFailed("malformed submission".into()));
        }
        self.registry
            .verify(&tx.submitter, &tx.signing_bytes(), &tx.signature)
            .map_err(|e| GatewayError::AuthFailed(e.to_string()))?;
        Ok(())
    }

    /// Authenticates `tx`, classifies `flow` and queues the endorsed
    /// transaction. Every call appends one record to the decision log.
    pub fn handle_submission(
        &mut self,
        now: Time,
        tx: &Transaction,
        flow: &[f64],
    ) -> Result<Decision, GatewayError> {
        let mut record = DecisionRecord {
            time: now,
            device: tx.submitter.clone(),
            verdict: None,
            action: Action::AuthFailed,
            endorsed: None,
            outcome: None,
        };
        if let Err(e) = self.authenticate(tx) {
            self.log.push(record);
            return Err(e);
        }
        let verdict = match self.inspect_flow(flow) {
            Ok(v) => v,
            Err(e) => {
                record.action = Action::ModelError;
                self.log.push(record);
                return Err(e);
            }
        };
        let decision = if verdict.is_malicious {
            self.nonce += 1;
            let alert = Transaction::new_signed(
                Payload::Alert {
                    device_id: tx.submitter.clone(),
                    class_name: verdict.class_name.clone(),
                    probability: Value::from_f64(verdict.probability),
                    quarantine: self.policy == Policy::AlertAndQuarantine,
                },
                &self.signer,
                self.nonce,
            );
            record.action = Action::Alert;
            Decision::AlertRaised(alert)
        } else {
            record.action = Action::Forward;
            Decision::ForwardToConsensus(tx.clone())
        };
        let endorsed = decision.tx().clone();
        record.endorsed = Some(endorsed.tx_id);
        record.verdict = Some(verdict);
        self.in_flight.insert(
            endorsed.tx_id,
            InFlight {
                record: self.log.len(),
                replies: BTreeMap::new(),
            },
        );
        self.log.push(record);
        self.pending.push_back(endorsed);
        Ok(decision)
    }

    /// Endorsed transactions not yet handed to consensus.
    pub fn take_pending(&mut self) -> Vec<Transaction> {
        self.pending.drain(..).collect()
    }

    pub fn is_complete(&self, tx_id: &Digest) -> bool {
        !self.in_flight.contains_key(tx_id)
    }

    pub fn outstanding(&self) -> usize {
        self.in_flight.len()
    }

    /// Records a replica reply; returns the outcome once f+1 replicas agree.
    pub fn on_reply(&mut self, reply: ClientReply) -> Option<Outcome> {
        let entry = self.in_flight.get_mut(&reply.tx_id)?;
        entry.replies.insert(reply.replica, reply.outcome.clone());
        let agreeing = entry.replies.values().filter(|o| **o == reply.outcome).count();
        if agreeing < self.reply_quorum {
            return None;
        }
        let done = self.in_flight.remove(&reply.tx_id)?;
        self.log[done.record].outcome = Some(reply.outcome.clone());
        Some(reply.outcome)
    }

    /// One line per submission:
    /// `time TAB device TAB class TAB probability TAB action TAB tx TAB outcome`.
    /// Missing fields are `-`; class names keep their spaces.
    pub fn export_log(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            let (class, prob) = match &r.verdict {
                Some(v) => (v.class_name.clone(), format!("{:.4}", v.probability)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.time,
                r.device,
                class,
                prob,
                r.action.as_str(),
                r.endorsed.map_or("-".into(), |d| d.to_hex()),
                r.outcome.as_ref().map_or("pending".into(), |o| o.to_string())
            );
        }
        out
    }
}
