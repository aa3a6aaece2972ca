//! End-to-end runs: devices submit sensor updates with flow records,
//! gateways classify and endorse, validators order everything with PBFT.
//!
//! Node ids: validators first (so replica ids equal node ids), then
//! gateways, then devices. Every member's credential is `key-<id>`, which is
//! fine for a closed simulation and nothing else.

mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::{
    forge_conflicting, max_faults, ClientReply, ConsensusConfig, Outbound, PbftMessage, Replica,
};
use crate::gateway::{Action, DecisionRecord, GatewayNode};
use crate::ids_data::synthetic::Generator;
use crate::ids_data::{prepare, CleanPolicy, FeatureSchema, SelectPolicy};
use crate::ids_models::{train, ClassifierModel, Family, ModelError, TrainConfig};
use crate::ledger::{
    create_genesis, export::export_chain, Block, Chain, ChainConfig, Payload, Transaction, TxKind,
    Value,
};
use crate::membership::{MembershipRegistry, Role, Signer};
use crate::netsim::{
    Behavior, FaultProfile, Forge, Input, NetConfig, NodeId, Output, Process, RunStats, SimEvent,
    Simulator, Time, TraceEntry, TraceLine,
};

pub use scenario::{bundled, validator_name, DeviceSpec, Scenario, ScenarioError, Submission, ADMIN, BUNDLED};

pub const CHAIN_ID: &str = "edgeguard-sim";

pub fn credential(id: &str) -> Vec<u8> {
    format!("key-{id}").into_bytes()
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetMsg {
    /// Device to gateway.
    Submission { tx: Transaction, flow: Vec<f64> },
    /// Gateway to validator.
    Request { tx: Transaction, client: String },
    Pbft(PbftMessage),
    /// Validator to gateway.
    Reply(ClientReply),
}

impl TraceLine for NetMsg {
    fn trace_line(&self) -> String {
        match self {
            NetMsg::Submission { tx, .. } => format!("Submission tx={}", tx.tx_id.short()),
            NetMsg::Request { tx, client } => format!("Request tx={} client={client}", tx.tx_id.short()),
            NetMsg::Pbft(m) => m.summary(),
            NetMsg::Reply(r) => format!("Reply tx={} {} from=v{}", r.tx_id.short(), r.outcome, r.replica),
        }
    }
}

struct PbftForge {
    signers: Vec<Signer>,
}

impl Forge<NetMsg> for PbftForge {
    fn conflicting(&self, sender: NodeId, msg: &NetMsg) -> Option<NetMsg> {
        match msg {
            NetMsg::Pbft(m) => forge_conflicting(m, self.signers.get(sender.0)?).map(NetMsg::Pbft),
            _ => None,
        }
    }
}

pub struct DeviceNode {
    signer: Signer,
    gateway: NodeId,
    sensor: String,
    /// (value, class) per scripted submission; timer id indexes this.
    script: Vec<(Value, usize)>,
    generator: Arc<Generator>,
    rng: ChaCha8Rng,
}

pub struct GatewayProc {
    pub node: GatewayNode,
    validators: usize,
    retransmit: Time,
    sent: Vec<Transaction>,
}

pub struct ValidatorProc {
    pub replica: Replica,
    directory: Arc<BTreeMap<String, NodeId>>,
}

pub enum Node {
    Validator(Box<ValidatorProc>),
    Gateway(Box<GatewayProc>),
    Device(Box<DeviceNode>),
}

impl Process<NetMsg> for Node {
    fn handle(&mut self, now: Time, input: Input<NetMsg>) -> Vec<Output<NetMsg>> {
        match self {
            Node::Validator(v) => v.handle(input),
            Node::Gateway(g) => g.handle(now, input),
            Node::Device(d) => d.handle(input),
        }
    }
}

impl ValidatorProc {
    fn handle(&mut self, input: Input<NetMsg>) -> Vec<Output<NetMsg>> {
        let outs = match input {
            Input::Timer(id) => self.replica.on_timer(id),
            Input::Message { msg: NetMsg::Pbft(m), .. } => self.replica.on_message(m),
            Input::Message {
                msg: NetMsg::Request { tx, client },
                ..
            } => self.replica.on_request(vec![(tx, client)]),
            Input::Message { .. } => Vec::new(),
        };
        outs.into_iter()
            .filter_map(|o| match o {
                Outbound::Send { to, msg } => Some(Output::Send {
                    to: NodeId(to),
                    msg: NetMsg::Pbft(msg),
                }),
                Outbound::Reply { client, reply } => self.directory.get(&client).map(|&to| Output::Send {
                    to,
                    msg: NetMsg::Reply(reply),
                }),
                Outbound::Timer { id, after } => Some(Output::Timer { id, after }),
            })
            .collect()
    }
}

impl GatewayProc {
    fn broadcast(&self, tx: &Transaction, out: &mut Vec<Output<NetMsg>>) {
        for v in 0..self.validators {
            out.push(Output::Send {
                to: NodeId(v),
                msg: NetMsg::Request {
                    tx: tx.clone(),
                    client: self.node.id().to_string(),
                },
            });
        }
    }

    fn handle(&mut self, now: Time, input: Input<NetMsg>) -> Vec<Output<NetMsg>> {
        let mut out = Vec::new();
        match input {
            Input::Message {
                msg: NetMsg::Submission { tx, flow },
                ..
            } => {
                // failures are recorded in the decision log
                let _ = self.node.handle_submission(now, &tx, &flow);
                for tx in self.node.take_pending() {
                    self.broadcast(&tx, &mut out);
                    out.push(Output::Timer {
                        id: self.sent.len() as u64,
                        after: self.retransmit,
                    });
                    self.sent.push(tx);
                }
            }
            Input::Message {
                msg: NetMsg::Reply(r),
                ..
            } => {
                self.node.on_reply(r);
            }
            Input::Timer(id) => {
                if let Some(tx) = self.sent.get(id as usize) {
                    if !self.node.is_complete(&tx.tx_id) {
                        let tx = tx.clone();
                        self.broadcast(&tx, &mut out);
                        out.push(Output::Timer {
                            id,
                            after: self.retransmit,
                        });
                    }
                }
            }
            Input::Message { .. } => {}
        }
        out
    }
}

impl DeviceNode {
    fn handle(&mut self, input: Input<NetMsg>) -> Vec<Output<NetMsg>> {
        let Input::Timer(i) = input else {
            return Vec::new();
        };
        let Some(&(value, class)) = self.script.get(i as usize) else {
            return Vec::new();
        };
        let flow = self.generator.sample(class, &mut self.rng);
        let tx = Transaction::new_signed(
            Payload::SensorUpdate {
                sensor_id: self.sensor.clone(),
                value,
            },
            &self.signer,
            i,
        );
        vec![Output::Send {
            to: self.gateway,
            msg: NetMsg::Submission { tx, flow },
        }]
    }
}

/// Trains a detector of `family` with default settings on the whole
/// cleaned, feature-selected synthetic corpus.
pub fn reference_model(corpus_seed: u64, family: Family) -> Result<ClassifierModel, ModelError> {
    let raw = Generator::new(corpus_seed).raw_table();
    let (data, _) = prepare(&raw, CleanPolicy::default(), &SelectPolicy::default())
        .map_err(|e| ModelError::Corrupt(e.to_string()))?;
    train(&data, &TrainConfig::default_for(family))
}

/// Registry and height-1 bootstrap block for a scenario.
pub fn bootstrap(sc: &Scenario) -> (Arc<MembershipRegistry>, Chain) {
    let admin = Signer::keyed(ADMIN, credential(ADMIN));
    let mut registry = MembershipRegistry::with_admin(ADMIN, credential(ADMIN));
    let p = registry
        .authenticate(ADMIN, &admin.prove(b"bootstrap"))
        .expect("admin credential");
    let members = (0..sc.validators)
        .map(|i| (validator_name(i), Role::Validator))
        .chain(sc.gateways.iter().map(|g| (g.clone(), Role::Gateway)))
        .chain(sc.devices.iter().map(|d| (d.id.clone(), Role::Device)));
    for (id, role) in members {
        registry
            .register_member(&p, &id, role, credential(&id))
            .expect("scenario ids are unique");
    }
    let mut txs = Vec::new();
    for d in &sc.devices {
        txs.push(Payload::RegisterDevice {
            device_id: d.id.clone(),
            owner: d.gateway.clone(),
        });
        txs.push(Payload::RegisterSensor {
            sensor_id: d.sensor.clone(),
            device_id: d.id.clone(),
            initial: Value::from_int(0),
        });
    }
    let txs = txs
        .into_iter()
        .enumerate()
        .map(|(i, p)| Transaction::new_signed(p, &admin, i as u64))
        .collect();
    let mut chain = Chain::new(create_genesis(&ChainConfig {
        chain_id: CHAIN_ID.into(),
    }));
    let block = Block::seal(1, chain.tip().block_hash, ADMIN, 1, txs);
    chain
        .append_block(block, &registry)
        .expect("bootstrap block is valid");
    (Arc::new(registry), chain)
}

pub const BOOTSTRAP_HEIGHT: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Summary {
    pub submissions: usize,
    pub committed_updates: usize,
    pub committed_alerts: usize,
    /// Refused by consensus validation.
    pub rejected: usize,
    pub auth_failures: usize,
    pub model_errors: usize,
    /// Endorsed but without an agreed outcome when the run stopped.
    pub incomplete: usize,
    pub malicious_verdicts: usize,
    pub blocks: u64,
    /// Most new views installed by any honest validator.
    pub view_changes: u64,
    /// Highest view any honest validator reached, installed or not.
    pub max_view: u64,
    pub final_time: Time,
    pub steps: u64,
    pub quiescent: bool,
    /// No two honest validators hold different blocks at one height.
    pub safety: bool,
    /// Every committed transaction was endorsed by some gateway.
    pub mediation: bool,
    /// Every committed alert matches exactly one malicious verdict.
    pub alert_soundness: bool,
}

impl Summary {
    /// Rejections of every kind: validation, authentication, model errors.
    pub fn rejections(&self) -> usize {
        self.rejected + self.auth_failures + self.model_errors
    }

    pub fn conservation(&self) -> bool {
        self.committed_updates + self.committed_alerts + self.rejections() == self.submissions
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("submissions", self.submissions.to_string());
        kv("committed_updates", self.committed_updates.to_string());
        kv("committed_alerts", self.committed_alerts.to_string());
        kv("rejected", self.rejected.to_string());
        kv("auth_failures", self.auth_failures.to_string());
        kv("model_errors", self.model_errors.to_string());
        kv("incomplete", self.incomplete.to_string());
        kv("malicious_verdicts", self.malicious_verdicts.to_string());
        kv("blocks", self.blocks.to_string());
        kv("view_changes", self.view_changes.to_string());
        kv("max_view", self.max_view.to_string());
        kv("final_time", self.final_time.to_string());
        kv("steps", self.steps.to_string());
        kv("quiescent", self.quiescent.to_string());
        kv("safety", self.safety.to_string());
        kv("mediation", self.mediation.to_string());
        kv("alert_soundness", self.alert_soundness.to_string());
        kv("conservation", self.conservation().to_string());
        out
    }
}

pub struct SimOutcome {
    pub scenario: Scenario,
    pub honest: Vec<bool>,
    pub chains: Vec<Vec<Block>>,
    /// Longest honest chain.
    pub ledger: Vec<Block>,
    pub trace: Vec<TraceEntry>,
    /// (gateway id, record) in gateway order.
    pub decisions: Vec<(String, DecisionRecord)>,
    pub stats: RunStats,
    pub summary: Summary,
    /// Final view of each validator.
    pub views: Vec<u64>,
}

impl SimOutcome {
    pub fn ledger_export(&self) -> String {
        export_chain(&self.ledger)
    }

    /// `time TAB from TAB to TAB message` per delivered message.
    pub fn trace_export(&self) -> String {
        let mut out = String::new();
        for t in &self.trace {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", t.time, t.from, t.to, t.line);
        }
        out
    }

    /// Gateway decision logs concatenated, each line prefixed with the
    /// gateway id.
    pub fn decision_export(&self) -> String {
        let mut out = String::new();
        for (g, r) in &self.decisions {
            let (class, prob) = match &r.verdict {
                Some(v) => (v.class_name.clone(), format!("{:.4}", v.probability)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{g}\t{}\t{}\t{class}\t{prob}\t{}\t{}\t{}",
                r.time,
                r.device,
                r.action.as_str(),
                r.endorsed.map_or("-".into(), |d| d.to_hex()),
                r.outcome.as_ref().map_or("pending".into(), |o| o.to_string())
            );
        }
        out
    }

    pub fn validator_view(&self, v: usize) -> u64 {
        self.views[v]
    }
}

pub struct RunOptions {
    pub record_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record_trace: true }
    }
}

fn is_honest(b: Behavior) -> bool {
    matches!(b, Behavior::Honest | Behavior::DelayInjector { .. })
}

pub fn run_scenario(
    sc: &Scenario,
    model: Arc<ClassifierModel>,
    opts: &RunOptions,
) -> Result<SimOutcome, ScenarioError> {
    sc.validate()?;
    let n = sc.validators;
    let (registry, chain) = bootstrap(sc);
    let validators: Vec<String> = (0..n).map(validator_name).collect();
    let config = ConsensusConfig::new(validators.clone());

    let mut directory = BTreeMap::new();
    for (i, g) in sc.gateways.iter().enumerate() {
        directory.insert(g.clone(), NodeId(n + i));
    }
    let device_base = n + sc.gateways.len();
    let directory = Arc::new(directory);

    let mut nodes = Vec::new();
    for (i, v) in validators.iter().enumerate() {
        nodes.push(Node::Validator(Box::new(ValidatorProc {
            replica: Replica::new(
                i,
                config.clone(),
                Signer::keyed(v, credential(v)),
                registry.clone(),
                chain.clone(),
            ),
            directory: directory.clone(),
        })));
    }
    let input = FeatureSchema::new(Generator::columns());
    for g in &sc.gateways {
        let devices = sc
            .devices
            .iter()
            .filter(|d| &d.gateway == g)
            .map(|d| d.id.clone());
        let mut node = GatewayNode::new(
            Signer::keyed(g, credential(g)),
            registry.clone(),
            input.clone(),
            devices,
            sc.policy,
            max_faults(n) + 1,
        );
        node.set_model(model.clone());
        nodes.push(Node::Gateway(Box::new(GatewayProc {
            node,
            validators: n,
            retransmit: sc.retransmit,
            sent: Vec::new(),
        })));
    }
    let generator = Arc::new(Generator::new(sc.corpus_seed));
    let mut flow_seeds = ChaCha8Rng::seed_from_u64(sc.seed ^ 0xf10f);
    let mut timers = Vec::new();
    for (i, d) in sc.devices.iter().enumerate() {
        let mut script = Vec::new();
        for s in sc.submissions.iter().filter(|s| s.device == d.id) {
            timers.push((s.time, NodeId(device_base + i), script.len() as u64));
            script.push((s.value, s.class));
        }
        nodes.push(Node::Device(Box::new(DeviceNode {
            signer: Signer::keyed(&d.id, credential(&d.id)),
            gateway: directory[&d.gateway],
            sensor: d.sensor.clone(),
            script,
            generator: generator.clone(),
            rng: ChaCha8Rng::seed_from_u64(flow_seeds.random()),
        })));
    }

    let mut sim = Simulator::new(
        nodes,
        NetConfig {
            seed: sc.seed,
            delay_min: sc.delay.0,
            delay_max: sc.delay.1,
            loss: sc.loss,
        },
    );
    sim.set_record_trace(opts.record_trace);
    sim.set_forge(Box::new(PbftForge {
        signers: validators.iter().map(|v| Signer::keyed(v, credential(v))).collect(),
    }));
    let mut behaviors = vec![Behavior::Honest; n];
    for &(v, b) in &sc.faults {
        behaviors[v] = b;
        sim.set_fault(FaultProfile {
            node: NodeId(v),
            behavior: b,
        })
        .map_err(|e| ScenarioError {
            line: 0,
            msg: e.to_string(),
        })?;
    }
    timers.sort();
    for (at, target, id) in timers {
        sim.schedule(SimEvent {
            deliver_at: at,
            target,
            input: Input::Timer(id),
        })
        .expect("scripted times are non-negative");
    }
    let stats = sim.run(sc.max_time, sc.max_steps);
    let final_time = sim.now();
    Ok(collect(sc, &sim, &behaviors, stats, final_time))
}

fn collect(
    sc: &Scenario,
    sim: &Simulator<NetMsg, Node>,
    behaviors: &[Behavior],
    stats: RunStats,
    final_time: Time,
) -> SimOutcome {
    let n = sc.validators;
    let mut chains = Vec::new();
    let mut views = Vec::new();
    let mut installed = Vec::new();
    let mut decisions = Vec::new();
    for node in sim.nodes() {
        match node {
            Node::Validator(v) => {
                chains.push(v.replica.chain().blocks().to_vec());
                views.push(v.replica.view());
                installed.push(v.replica.views_installed());
            }
            Node::Gateway(g) => {
                for r in g.node.log() {
                    decisions.push((g.node.id().to_string(), r.clone()));
                }
            }
            Node::Device(_) => {}
        }
    }
    let honest: Vec<bool> = behaviors.iter().map(|&b| is_honest(b)).collect();
    let honest_ids: Vec<usize> = (0..n).filter(|&v| honest[v]).collect();

    let mut safety = true;
    for (a, &i) in honest_ids.iter().enumerate() {
        for &j in &honest_ids[a + 1..] {
            let common = chains[i].len().min(chains[j].len());
            if (0..common).any(|h| chains[i][h].block_hash != chains[j][h].block_hash) {
                safety = false;
            }
        }
    }
    let reference = honest_ids
        .iter()
        .copied()
        .max_by_key(|&v| (chains[v].len(), std::cmp::Reverse(v)))
        .unwrap_or(0);
    let ledger = chains[reference].clone();

    let committed: Vec<&Transaction> = ledger
        .iter()
        .filter(|b| b.height > BOOTSTRAP_HEIGHT)
        .flat_map(|b| &b.txs)
        .collect();
    let endorsed: BTreeSet<_> = decisions.iter().filter_map(|(_, r)| r.endorsed).collect();
    let mediation = committed.iter().all(|t| endorsed.contains(&t.tx_id));
    let mut alert_soundness = true;
    for t in committed.iter().filter(|t| t.kind() == TxKind::Alert) {
        let matches = decisions
            .iter()
            .filter(|(_, r)| r.action == Action::Alert && r.endorsed == Some(t.tx_id))
            .count();
        alert_soundness &= matches == 1;
    }

    let count = |a: Action| decisions.iter().filter(|(_, r)| r.action == a).count();
    let summary = Summary {
        submissions: sc.submissions.len(),
        committed_updates: committed.iter().filter(|t| t.kind() == TxKind::SensorUpdate).count(),
        committed_alerts: committed.iter().filter(|t| t.kind() == TxKind::Alert).count(),
        rejected: decisions
            .iter()
            .filter(|(_, r)| matches!(r.outcome, Some(crate::consensus::Outcome::Rejected { .. })))
            .count(),
        auth_failures: count(Action::AuthFailed),
        model_errors: count(Action::ModelError),
        incomplete: decisions
            .iter()
            .filter(|(_, r)| r.endorsed.is_some() && r.outcome.is_none())
            .count(),
        malicious_verdicts: count(Action::Alert),
        blocks: ledger.len() as u64 - 1 - BOOTSTRAP_HEIGHT,
        view_changes: honest_ids.iter().map(|&v| installed[v]).max().unwrap_or(0),
        max_view: honest_ids.iter().map(|&v| views[v]).max().unwrap_or(0),
        final_time,
        steps: stats.steps,
        quiescent: stats.quiescent,
        safety,
        mediation,
        alert_soundness,
    };
    SimOutcome {
        scenario: sc.clone(),
        honest,
        chains,
        ledger,
        trace: sim.trace().to_vec(),
        decisions,
        stats,
        summary,
        views,
    }
}

/// A randomized safety run: four validators, one of them silent or
/// equivocating, random delays and light loss, a few devices submitting
/// benign and attack flows at random times.
pub fn random_schedule(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let faulty = rng.random_range(0..4usize);
    let behavior = if rng.random_bool(0.5) {
        Behavior::Silent
    } else {
        Behavior::Equivocate
    };
    let lo = rng.random_range(1..5);
    let hi = lo + rng.random_range(0..20);
    let devices: Vec<DeviceSpec> = (0..3)
        .map(|i| DeviceSpec {
            id: format!("d{i}"),
            gateway: "gw-1".into(),
            sensor: format!("s{i}"),
        })
        .collect();
    let submissions = (0..6)
        .map(|k| Submission {
            time: rng.random_range(0..400),
            device: format!("d{}", k % 3),
            value: Value::from_int(k as i64),
            class: if rng.random_bool(0.8) { 0 } else { rng.random_range(1..15) },
        })
        .collect();
    Scenario {
        seed,
        delay: (lo, hi),
        loss: if rng.random_bool(0.3) { 0.02 } else { 0.0 },
        max_time: 20_000,
        faults: vec![(faulty, behavior)],
        gateways: vec!["gw-1".into()],
        devices,
        submissions,
        ..Scenario::default()
    }
}
