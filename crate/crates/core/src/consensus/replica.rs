use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use super::message::{
    Body, ClientReply, NewViewBody, Outcome, PbftMessage, Phase, PreparedCert, Proposal,
    RejectedTx, ReplicaId, ViewChangeBody,
};
use super::{commit_quorum, prepare_quorum, primary_of, ConsensusConfig};
use crate::ledger::{Block, Chain, Digest, Transaction, WorldState};
use crate::membership::{authorize, Action, MembershipRegistry, Signer};
use crate::netsim::Time;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    Send { to: ReplicaId, msg: PbftMessage },
    Reply { client: String, reply: ClientReply },
    Timer { id: u64, after: Time },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuspicionKind {
    BadSignature,
    Equivocation,
    InvalidCertificate,
    InvalidNewView,
    UnauthorizedClient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suspicion {
    pub kind: SuspicionKind,
    pub sender: ReplicaId,
    pub view: u64,
    pub seq: u64,
}

/// Why a replica halted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultReport {
    pub seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Normal,
    /// Waiting for the NewView of `view`.
    ViewChange,
}

#[derive(Debug, Clone, Default)]
struct Slot {
    pre_prepare: Option<PbftMessage>,
    prepares: BTreeMap<Digest, BTreeMap<ReplicaId, PbftMessage>>,
    commits: BTreeMap<Digest, BTreeSet<ReplicaId>>,
    sent_commit: bool,
    fetched: Option<PbftMessage>,
    fetch_requested: bool,
}

#[derive(Debug, Clone)]
struct PendingRequest {
    tx: Transaction,
    client: String,
}

/// One PBFT replica as a pure state machine.
#[derive(Debug, Clone)]
pub struct Replica {
    id: ReplicaId,
    config: ConsensusConfig,
    signer: Signer,
    registry: Arc<MembershipRegistry>,
    chain: Chain,
    base_height: u64,
    base_hash: Digest,

    view: u64,
    mode: Mode,
    /// Keyed by `(seq, view)`.
    log: BTreeMap<(u64, u64), Slot>,
    last_executed: u64,
    /// Highest sequence number assigned in the current view.
    next_seq: u64,
    executed: Vec<Digest>,

    pending: BTreeMap<u64, PendingRequest>,
    pending_ids: BTreeMap<Digest, u64>,
    arrivals: u64,
    done: BTreeMap<Digest, (String, Outcome)>,

    timer_epoch: u64,
    timer_armed: bool,
    consecutive_view_changes: u32,
    view_changes: BTreeMap<u64, BTreeMap<ReplicaId, PbftMessage>>,
    new_view_sent: BTreeSet<u64>,
    views_installed: u64,

    buffer: VecDeque<PbftMessage>,
    suspicions: Vec<Suspicion>,
    fault: Option<FaultReport>,
    out: Vec<Outbound>,
}

impl Replica {
    /// `chain` is the agreed starting ledger; sequence number `n` commits
    /// the block at height `chain.height() + n`.
    pub fn new(
        id: ReplicaId,
        config: ConsensusConfig,
        signer: Signer,
        registry: Arc<MembershipRegistry>,
        chain: Chain,
    ) -> Self {
        assert!(config.n() >= 4, "PBFT needs at least 4 replicas");
        assert!(id < config.n());
        let base_height = chain.height();
        let base_hash = chain.tip().block_hash;
        Self {
            id,
            config,
            signer,
            registry,
            chain,
            base_height,
            base_hash,
            view: 0,
            mode: Mode::Normal,
            log: BTreeMap::new(),
            last_executed: 0,
            next_seq: 0,
            executed: Vec::new(),
            pending: BTreeMap::new(),
            pending_ids: BTreeMap::new(),
            arrivals: 0,
            done: BTreeMap::new(),
            timer_epoch: 0,
            timer_armed: false,
            consecutive_view_changes: 0,
            view_changes: BTreeMap::new(),
            new_view_sent: BTreeSet::new(),
            views_installed: 0,
            buffer: VecDeque::new(),
            suspicions: Vec::new(),
            fault: None,
            out: Vec::new(),
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }
    pub fn view(&self) -> u64 {
        self.view
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn chain(&self) -> &Chain {
        &self.chain
    }
    pub fn last_executed(&self) -> u64 {
        self.last_executed
    }
    /// Proposal digests in execution order (index 0 is sequence 1).
    pub fn executed(&self) -> &[Digest] {
        &self.executed
    }
    pub fn suspicions(&self) -> &[Suspicion] {
        &self.suspicions
    }
    pub fn fault(&self) -> Option<&FaultReport> {
        self.fault.as_ref()
    }
    pub fn views_installed(&self) -> u64 {
        self.views_installed
    }
    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }
    pub fn timer_armed(&self) -> bool {
        self.timer_armed
    }
    pub fn is_primary(&self) -> bool {
        primary_of(self.view, self.config.n()) == self.id
    }
    pub fn current_timeout(&self) -> Time {
        self.config.base_timeout << self.consecutive_view_changes.min(20)
    }

    fn f(&self) -> usize {
        self.config.f()
    }

    fn take_out(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.out)
    }

    fn broadcast(&mut self, msg: PbftMessage) {
        for to in (0..self.config.n()).filter(|&r| r != self.id) {
            self.out.push(Outbound::Send {
                to,
                msg: msg.clone(),
            });
        }
    }

    fn sign(&self, view: u64, seq: u64, digest: Digest, body: Body) -> PbftMessage {
        PbftMessage::signed(view, seq, digest, self.id, body, &self.signer)
    }

    fn suspect(&mut self, kind: SuspicionKind, msg: &PbftMessage) {
        self.suspicions.push(Suspicion {
            kind,
            sender: msg.sender,
            view: msg.view,
            seq: msg.seq,
        });
    }

    // ---- quorum predicates ------------------------------------------------

    /// PrePrepare for `digest` plus at least 2f Prepares from distinct
    /// replicas.
    pub fn prepared(&self, view: u64, seq: u64, digest: &Digest) -> bool {
        let Some(slot) = self.log.get(&(seq, view)) else {
            return false;
        };
        slot_prepared(slot, digest, self.f())
    }

    /// Prepared, plus at least 2f+1 matching Commits (own included).
    pub fn committed_local(&self, view: u64, seq: u64, digest: &Digest) -> bool {
        let Some(slot) = self.log.get(&(seq, view)) else {
            return false;
        };
        slot_prepared(slot, digest, self.f())
            && slot.commits.get(digest).map_or(0, BTreeSet::len) >= commit_quorum(self.f())
    }

    // ---- requests ---------------------------------------------------------

    /// Client requests forwarded by gateways.
    pub fn on_request(&mut self, batch: Vec<(Transaction, String)>) -> Vec<Outbound> {
        if self.fault.is_some() {
            return Vec::new();
        }
        for (tx, client) in batch {
            self.accept_request(tx, client, false);
        }
        self.try_propose();
        self.refresh_timer();
        self.take_out()
    }

    fn client_authorized(&self, client: &str) -> bool {
        self.registry.role_of(client) == Some(crate::membership::Role::Gateway)
    }

    fn accept_request(&mut self, tx: Transaction, client: String, relayed: bool) {
        if !self.client_authorized(&client) {
            self.suspicions.push(Suspicion {
                kind: SuspicionKind::UnauthorizedClient,
                sender: self.id,
                view: self.view,
                seq: 0,
            });
            return;
        }
        if let Some((c, outcome)) = self.done.get(&tx.tx_id) {
            if !relayed {
                self.out.push(Outbound::Reply {
                    client: c.clone(),
                    reply: ClientReply {
                        tx_id: tx.tx_id,
                        outcome: outcome.clone(),
                        replica: self.id,
                    },
                });
            }
            return;
        }
        if self.pending_ids.contains_key(&tx.tx_id) {
            return;
        }
        self.arrivals += 1;
        self.pending_ids.insert(tx.tx_id, self.arrivals);
        self.pending.insert(
            self.arrivals,
            PendingRequest {
                tx: tx.clone(),
                client: client.clone(),
            },
        );
        if !relayed && !self.is_primary() && self.mode == Mode::Normal {
            let primary = primary_of(self.view, self.config.n());
            let msg = self.sign(self.view, 0, tx.tx_id, Body::Request { tx, client });
            self.out.push(Outbound::Send { to: primary, msg });
        }
    }

    /// Primary: propose the next batch once everything assigned so far has
    /// executed.
    fn try_propose(&mut self) {
        if self.fault.is_some()
            || self.mode != Mode::Normal
            || !self.is_primary()
            || self.last_executed != self.next_seq
            || self.pending.is_empty()
        {
            return;
        }
        let principal_ok = self
            .registry
            .role_of(self.signer.id())
            .is_some_and(|r| crate::membership::acl(r).contains(&Action::ProposeBlock));
        if !principal_ok {
            return;
        }
        let seq = self.next_seq + 1;
        let mut state: WorldState = self.chain.state().clone();
        let mut txs = Vec::new();
        let mut clients = Vec::new();
        let mut rejected = Vec::new();
        for req in self.pending.values().take(self.config.max_batch) {
            match state.validate_transaction(&req.tx, &self.registry) {
                Ok(()) => {
                    state.apply_transaction(&req.tx);
                    txs.push(req.tx.clone());
                    clients.push(req.client.clone());
                }
                Err(reason) => rejected.push(RejectedTx {
                    tx: req.tx.clone(),
                    client: req.client.clone(),
                    position: txs.len(),
                    reason,
                }),
            }
        }
        let tip = self.chain.tip();
        let height = tip.height + 1;
        let block = Block::seal(height, tip.block_hash, self.signer.id(), height, txs);
        let proposal = Proposal {
            block,
            clients,
            rejected,
        };
        let digest = proposal.digest();
        let msg = self.sign(self.view, seq, digest, Body::PrePrepare(Box::new(proposal)));
        self.next_seq = seq;
        self.log.entry((seq, self.view)).or_default().pre_prepare = Some(msg.clone());
        self.broadcast(msg);
        self.check_progress(self.view, seq);
    }

    // ---- message dispatch -------------------------------------------------

    pub fn on_message(&mut self, msg: PbftMessage) -> Vec<Outbound> {
        if self.fault.is_some() {
            return Vec::new();
        }
        if !self.verify(&msg) {
            self.suspect(SuspicionKind::BadSignature, &msg);
            return Vec::new();
        }
        self.dispatch(msg);
        self.refresh_timer();
        self.take_out()
    }

    fn dispatch(&mut self, msg: PbftMessage) {
        match msg.phase() {
            Phase::Request => {
                if let Body::Request { tx, client } = msg.body {
                    self.accept_request(tx, client, true);
                    self.try_propose();
                }
            }
            Phase::PrePrepare | Phase::Prepare | Phase::Commit => {
                if msg.view < self.view {
                    return;
                }
                if msg.view > self.view || self.mode == Mode::ViewChange {
                    self.buffer_message(msg);
                    return;
                }
                match msg.phase() {
                    Phase::PrePrepare => self.handle_pre_prepare(msg),
                    Phase::Prepare => self.handle_prepare(msg),
                    _ => self.handle_commit(msg),
                }
            }
            Phase::Fetch => self.handle_fetch(msg),
            Phase::FetchReply => self.handle_fetch_reply(msg),
            Phase::ViewChange => self.handle_view_change(msg),
            Phase::NewView => self.handle_new_view(msg),
        }
    }

    fn buffer_message(&mut self, msg: PbftMessage) {
        if self.buffer.len() >= self.config.buffer_limit {
            self.buffer.pop_front();
        }
        self.buffer.push_back(msg);
    }

    fn verify(&self, msg: &PbftMessage) -> bool {
        let Some(member) = self.config.validators.get(msg.sender) else {
            return false;
        };
        match self.registry.verify(member, &msg.signing_bytes(), &msg.signature) {
            Ok(p) => authorize(&p, Action::ValidateBlock),
            Err(_) => false,
        }
    }

    fn in_window(&self, seq: u64) -> bool {
        seq >= 1 && seq <= self.last_executed + self.config.watermark_window
    }

    fn handle_pre_prepare(&mut self, msg: PbftMessage) {
        let n = self.config.n();
        if msg.sender != primary_of(msg.view, n) || msg.sender == self.id {
            return;
        }
        if msg.seq <= self.last_executed || !self.in_window(msg.seq) {
            return;
        }
        let Some(p) = msg.proposal() else { return };
        if p.digest() != msg.digest || p.block.height != self.base_height + msg.seq {
            self.suspect(SuspicionKind::InvalidCertificate, &msg);
            return;
        }
        let slot = self.log.entry((msg.seq, msg.view)).or_default();
        if let Some(existing) = &slot.pre_prepare {
            if existing.digest != msg.digest {
                self.suspect(SuspicionKind::Equivocation, &msg);
            }
            return;
        }
        let (view, seq, digest) = (msg.view, msg.seq, msg.digest);
        slot.pre_prepare = Some(msg);
        self.next_seq = self.next_seq.max(seq);
        self.send_prepare(view, seq, digest);
        self.check_progress(view, seq);
    }

    fn send_prepare(&mut self, view: u64, seq: u64, digest: Digest) {
        let prepare = self.sign(view, seq, digest, Body::Prepare);
        self.log
            .entry((seq, view))
            .or_default()
            .prepares
            .entry(digest)
            .or_default()
            .insert(self.id, prepare.clone());
        self.broadcast(prepare);
    }

    fn handle_prepare(&mut self, msg: PbftMessage) {
        if msg.sender == primary_of(msg.view, self.config.n()) || !self.in_window(msg.seq) {
            return;
        }
        let (view, seq) = (msg.view, msg.seq);
        self.log
            .entry((seq, view))
            .or_default()
            .prepares
            .entry(msg.digest)
            .or_default()
            .insert(msg.sender, msg);
        self.check_progress(view, seq);
    }

    fn handle_commit(&mut self, msg: PbftMessage) {
        if !self.in_window(msg.seq) {
            return;
        }
        let (view, seq) = (msg.view, msg.seq);
        self.log
            .entry((seq, view))
            .or_default()
            .commits
            .entry(msg.digest)
            .or_default()
            .insert(msg.sender);
        self.check_progress(view, seq);
    }

    fn check_progress(&mut self, view: u64, seq: u64) {
        let f = self.f();
        let Some(slot) = self.log.get_mut(&(seq, view)) else {
            return;
        };
        if let Some(pp) = prepared_pre_prepare(slot, f) {
            let digest = pp.digest;
            if !slot.sent_commit {
                slot.sent_commit = true;
                slot.commits.entry(digest).or_default().insert(self.id);
                let commit = self.sign(view, seq, digest, Body::Commit);
                self.broadcast(commit);
            }
        }
        self.maybe_fetch(view, seq);
        self.try_execute();
    }

    /// Evidence that a digest this replica lacks was prepared somewhere:
    /// f+1 commits or 2f backup prepares. Asks those senders for the
    /// primary's signed pre-prepare.
    fn maybe_fetch(&mut self, view: u64, seq: u64) {
        if seq <= self.last_executed {
            return;
        }
        let f = self.f();
        let primary = primary_of(view, self.config.n());
        let Some(slot) = self.log.get_mut(&(seq, view)) else {
            return;
        };
        if slot.fetch_requested || slot.fetched.is_some() {
            return;
        }
        let have = slot.pre_prepare.as_ref().map(|p| p.digest);
        let Some((digest, senders)) = certified_elsewhere(slot, f, primary, have) else {
            return;
        };
        slot.fetch_requested = true;
        let req = self.sign(view, seq, digest, Body::Fetch);
        for to in senders.into_iter().filter(|&r| r != self.id) {
            self.out.push(Outbound::Send {
                to,
                msg: req.clone(),
            });
        }
    }

    fn handle_fetch(&mut self, msg: PbftMessage) {
        let Some(slot) = self.log.get(&(msg.seq, msg.view)) else {
            return;
        };
        let found = [slot.pre_prepare.as_ref(), slot.fetched.as_ref()]
            .into_iter()
            .flatten()
            .find(|p| p.digest == msg.digest)
            .cloned();
        if let Some(pp) = found {
            let reply = self.sign(msg.view, msg.seq, msg.digest, Body::FetchReply(Box::new(pp)));
            self.out.push(Outbound::Send {
                to: msg.sender,
                msg: reply,
            });
        }
    }

    fn handle_fetch_reply(&mut self, msg: PbftMessage) {
        let Body::FetchReply(inner) = msg.body else { return };
        let inner = *inner;
        let valid = inner.phase() == Phase::PrePrepare
            && inner.sender == primary_of(inner.view, self.config.n())
            && self.verify(&inner)
            && inner.proposal().is_some_and(|p| p.digest() == inner.digest);
        if !valid {
            return;
        }
        let f = self.f();
        let (view, seq) = (inner.view, inner.seq);
        let Some(slot) = self.log.get_mut(&(seq, view)) else {
            return;
        };
        let have = slot.pre_prepare.as_ref().map(|p| p.digest);
        let certified = certified_elsewhere(slot, f, inner.sender, have)
            .is_some_and(|(d, _)| d == inner.digest);
        if certified && slot.fetched.is_none() {
            slot.fetched = Some(inner);
            self.check_progress(view, seq);
        }
    }

    // ---- execution --------------------------------------------------------

    fn executable(&self, seq: u64) -> Option<Proposal> {
        let f = self.f();
        let quorum = commit_quorum(f);
        for (_, slot) in self.log.range((seq, 0)..=(seq, u64::MAX)) {
            if let Some(pp) = &slot.pre_prepare {
                let d = pp.digest;
                if slot_prepared(slot, &d, f)
                    && slot.commits.get(&d).map_or(0, BTreeSet::len) >= quorum
                {
                    return pp.proposal().cloned();
                }
            }
            if let Some(fetched) = &slot.fetched {
                if slot.commits.get(&fetched.digest).map_or(0, BTreeSet::len) >= quorum {
                    return fetched.proposal().cloned();
                }
            }
        }
        None
    }

    fn try_execute(&mut self) {
        let mut progressed = false;
        while self.fault.is_none() {
            let seq = self.last_executed + 1;
            let Some(proposal) = self.executable(seq) else {
                break;
            };
            self.execute(seq, proposal);
            progressed = true;
        }
        if progressed && self.fault.is_none() {
            if self.mode == Mode::Normal {
                self.consecutive_view_changes = 0;
                self.disarm_timer();
            }
            self.try_propose();
        }
    }

    /// Replays the refusals against the pre-block state and runs the ledger
    /// append checks, without mutating anything.
    fn check_proposal(&self, p: &Proposal) -> Result<(), String> {
        if p.clients.len() != p.block.txs.len() {
            return Err("client list does not match transactions".into());
        }
        let mut refusals: Vec<&RejectedTx> = p.rejected.iter().collect();
        refusals.sort_by_key(|r| r.position);
        let mut state = self.chain.state().clone();
        let mut next = refusals.iter().peekable();
        for i in 0..=p.block.txs.len() {
            while let Some(r) = next.next_if(|r| r.position == i) {
                match state.validate_transaction(&r.tx, &self.registry) {
                    Err(reason) if reason == r.reason => {}
                    _ => return Err(format!("refusal of {} does not hold", r.tx.tx_id.short())),
                }
            }
            if let Some(tx) = p.block.txs.get(i) {
                if state.validate_transaction(tx, &self.registry).is_ok() {
                    state.apply_transaction(tx);
                }
            }
        }
        if next.peek().is_some() {
            return Err("refusal position out of range".into());
        }
        self.chain
            .check_block(&p.block, &self.registry)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn execute(&mut self, seq: u64, proposal: Proposal) {
        if let Err(reason) = self.check_proposal(&proposal) {
            self.fault = Some(FaultReport { seq, reason });
            return;
        }
        let digest = proposal.digest();
        let height = proposal.block.height;
        if let Err(e) = self.chain.append_block(proposal.block.clone(), &self.registry) {
            self.fault = Some(FaultReport {
                seq,
                reason: e.to_string(),
            });
            return;
        }
        self.executed.push(digest);
        self.last_executed = seq;
        self.next_seq = self.next_seq.max(seq);
        for (tx, client) in proposal.block.txs.iter().zip(&proposal.clients) {
            self.finish(tx.tx_id, client, Outcome::Committed { height });
        }
        for r in &proposal.rejected {
            self.finish(
                r.tx.tx_id,
                &r.client,
                Outcome::Rejected {
                    reason: r.reason.code().to_string(),
                },
            );
        }
    }

    fn finish(&mut self, tx_id: Digest, client: &str, outcome: Outcome) {
        if let Some(arrival) = self.pending_ids.remove(&tx_id) {
            self.pending.remove(&arrival);
        }
        self.done
            .insert(tx_id, (client.to_string(), outcome.clone()));
        self.out.push(Outbound::Reply {
            client: client.to_string(),
            reply: ClientReply {
                tx_id,
                outcome,
                replica: self.id,
            },
        });
    }

    // ---- timers -----------------------------------------------------------

    fn outstanding(&self) -> bool {
        !self.pending.is_empty()
            || self
                .log
                .range((self.last_executed + 1, 0)..)
                .any(|((_, v), s)| *v == self.view && s.pre_prepare.is_some())
    }

    fn arm_timer(&mut self) {
        self.timer_epoch += 1;
        self.timer_armed = true;
        self.out.push(Outbound::Timer {
            id: self.timer_epoch,
            after: self.current_timeout(),
        });
    }

    fn disarm_timer(&mut self) {
        if self.timer_armed {
            self.timer_armed = false;
            self.timer_epoch += 1;
        }
    }

    fn refresh_timer(&mut self) {
        if self.fault.is_some() || self.mode != Mode::Normal {
            return;
        }
        match (self.outstanding(), self.timer_armed) {
            (true, false) => self.arm_timer(),
            (false, true) => self.disarm_timer(),
            _ => {}
        }
    }

    pub fn on_timer(&mut self, id: u64) -> Vec<Outbound> {
        if self.fault.is_some() || id != self.timer_epoch || !self.timer_armed {
            return Vec::new();
        }
        self.timer_armed = false;
        match self.mode {
            Mode::Normal if self.outstanding() => self.start_view_change(self.view + 1),
            Mode::Normal => {}
            Mode::ViewChange => self.start_view_change(self.view + 1),
        }
        self.take_out()
    }

    // ---- view change ------------------------------------------------------

    /// Highest-view prepared certificate for every sequence number in the
    /// log.
    fn prepared_certificates(&self) -> Vec<PreparedCert> {
        let f = self.f();
        let mut best: BTreeMap<u64, PreparedCert> = BTreeMap::new();
        for (&(seq, _view), slot) in &self.log {
            let Some(pp) = prepared_pre_prepare(slot, f) else { continue };
            let prepares: Vec<PbftMessage> = slot.prepares[&pp.digest]
                .values()
                .filter(|m| m.sender != pp.sender)
                .take(prepare_quorum(f))
                .cloned()
                .collect();
            // BTreeMap iteration is view-ascending within a seq
            best.insert(
                seq,
                PreparedCert {
                    pre_prepare: pp.clone(),
                    prepares,
                },
            );
        }
        best.into_values().collect()
    }

    fn start_view_change(&mut self, new_view: u64) {
        debug_assert!(new_view > self.view || self.mode == Mode::Normal);
        self.view = new_view;
        self.mode = Mode::ViewChange;
        self.consecutive_view_changes += 1;
        let body = ViewChangeBody {
            last_executed: self.last_executed,
            prepared: self.prepared_certificates(),
        };
        let msg = self.sign(new_view, 0, Digest::ZERO, Body::ViewChange(Box::new(body)));
        self.view_changes
            .entry(new_view)
            .or_default()
            .insert(self.id, msg.clone());
        self.broadcast(msg);
        self.timer_armed = false;
        self.arm_timer();
        self.maybe_send_new_view(new_view);
    }

    fn valid_cert(&self, cert: &PreparedCert, for_view: u64) -> bool {
        let n = self.config.n();
        let pp = &cert.pre_prepare;
        if pp.phase() != Phase::PrePrepare
            || pp.view >= for_view
            || pp.sender != primary_of(pp.view, n)
            || !self.verify(pp)
            || !pp.proposal().is_some_and(|p| p.digest() == pp.digest)
        {
            return false;
        }
        let mut senders = BTreeSet::new();
        for p in &cert.prepares {
            let ok = p.phase() == Phase::Prepare
                && p.view == pp.view
                && p.seq == pp.seq
                && p.digest == pp.digest
                && p.sender != pp.sender
                && self.verify(p);
            if !ok {
                return false;
            }
            senders.insert(p.sender);
        }
        senders.len() >= prepare_quorum(self.f())
    }

    fn valid_view_change(&self, msg: &PbftMessage, view: u64) -> bool {
        let Body::ViewChange(body) = &msg.body else {
            return false;
        };
        msg.view == view
            && self.verify(msg)
            && body.prepared.iter().all(|c| self.valid_cert(c, view))
    }

    fn handle_view_change(&mut self, msg: PbftMessage) {
        let v = msg.view;
        if v < self.view || (v == self.view && self.mode == Mode::Normal) {
            return;
        }
        if !self.valid_view_change(&msg, v) {
            self.suspect(SuspicionKind::InvalidCertificate, &msg);
            return;
        }
        self.view_changes
            .entry(v)
            .or_default()
            .insert(msg.sender, msg);

        // join once f+1 replicas want a view beyond ours
        let ahead: BTreeMap<ReplicaId, u64> = self
            .view_changes
            .range(self.view + 1..)
            .flat_map(|(view, m)| m.keys().map(move |s| (*s, *view)))
            .filter(|(s, _)| *s != self.id)
            .fold(BTreeMap::new(), |mut acc, (s, view)| {
                let e = acc.entry(s).or_insert(view);
                *e = (*e).min(view);
                acc
            });
        if ahead.len() > self.f() {
            let target = *ahead.values().min().expect("non-empty");
            self.start_view_change(target);
            return;
        }
        self.maybe_send_new_view(v);
    }

    fn maybe_send_new_view(&mut self, v: u64) {
        let n = self.config.n();
        if primary_of(v, n) != self.id
            || self.view != v
            || self.mode != Mode::ViewChange
            || self.new_view_sent.contains(&v)
        {
            return;
        }
        let Some(vcs) = self.view_changes.get(&v) else {
            return;
        };
        let quorum = commit_quorum(self.f());
        if vcs.len() < quorum || !vcs.contains_key(&self.id) {
            return;
        }
        // own message first, then lowest ids
        let mut chosen: Vec<PbftMessage> = vec![vcs[&self.id].clone()];
        chosen.extend(
            vcs.iter()
                .filter(|(s, _)| **s != self.id)
                .map(|(_, m)| m.clone())
                .take(quorum - 1),
        );
        let proposals = self.select_reproposals(&chosen, v);
        let pre_prepares: Vec<PbftMessage> = proposals
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let d = p.digest();
                self.sign(v, i as u64 + 1, d, Body::PrePrepare(Box::new(p)))
            })
            .collect();
        let body = NewViewBody {
            view_changes: chosen,
            pre_prepares: pre_prepares.clone(),
        };
        let msg = self.sign(v, 0, Digest::ZERO, Body::NewView(Box::new(body)));
        self.new_view_sent.insert(v);
        self.broadcast(msg);
        self.install_new_view(v, pre_prepares);
    }

    /// For every sequence number up to the highest certified one, the
    /// highest-view certified proposal, or an empty block where none exists.
    fn select_reproposals(&self, view_changes: &[PbftMessage], view: u64) -> Vec<Proposal> {
        let mut best: BTreeMap<u64, &PbftMessage> = BTreeMap::new();
        for vc in view_changes {
            let Body::ViewChange(body) = &vc.body else { continue };
            for cert in &body.prepared {
                let pp = &cert.pre_prepare;
                match best.get(&pp.seq) {
                    Some(cur) if cur.view >= pp.view => {}
                    _ => {
                        best.insert(pp.seq, pp);
                    }
                }
            }
        }
        let max_seq = best.keys().next_back().copied().unwrap_or(0);
        let proposer = &self.config.validators[primary_of(view, self.config.n())];
        let mut prev = self.base_hash;
        let mut out = Vec::new();
        for seq in 1..=max_seq {
            let p = match best.get(&seq).and_then(|pp| pp.proposal()) {
                Some(p) => p.clone(),
                None => {
                    let height = self.base_height + seq;
                    Proposal {
                        block: Block::seal(height, prev, proposer, height, Vec::new()),
                        clients: Vec::new(),
                        rejected: Vec::new(),
                    }
                }
            };
            prev = p.block.block_hash;
            out.push(p);
        }
        out
    }

    fn handle_new_view(&mut self, msg: PbftMessage) {
        let v = msg.view;
        let n = self.config.n();
        if v < self.view || (v == self.view && self.mode == Mode::Normal) {
            return;
        }
        if msg.sender != primary_of(v, n) {
            return;
        }
        let Body::NewView(body) = &msg.body else { return };
        let mut senders = BTreeSet::new();
        for vc in &body.view_changes {
            if !self.valid_view_change(vc, v) {
                self.suspect(SuspicionKind::InvalidNewView, &msg);
                return;
            }
            senders.insert(vc.sender);
        }
        if senders.len() < commit_quorum(self.f()) {
            self.suspect(SuspicionKind::InvalidNewView, &msg);
            return;
        }
        let expected = self.select_reproposals(&body.view_changes, v);
        let matches = expected.len() == body.pre_prepares.len()
            && expected.iter().zip(&body.pre_prepares).enumerate().all(|(i, (p, pp))| {
                pp.phase() == Phase::PrePrepare
                    && pp.view == v
                    && pp.seq == i as u64 + 1
                    && pp.sender == msg.sender
                    && pp.digest == p.digest()
                    && pp.proposal() == Some(p)
                    && self.verify(pp)
            });
        if !matches {
            self.suspect(SuspicionKind::InvalidNewView, &msg);
            return;
        }
        if self.mode == Mode::Normal || self.view < v {
            // adopted without having timed out ourselves
            self.consecutive_view_changes += 1;
        }
        let pre_prepares = body.pre_prepares.clone();
        self.install_new_view(v, pre_prepares);
    }

    fn install_new_view(&mut self, v: u64, pre_prepares: Vec<PbftMessage>) {
        self.view = v;
        self.mode = Mode::Normal;
        self.views_installed += 1;
        let primary = primary_of(v, self.config.n());
        let mut max_seq = self.last_executed;
        for pp in pre_prepares {
            let (seq, digest) = (pp.seq, pp.digest);
            max_seq = max_seq.max(seq);
            if seq <= self.last_executed && self.executed[(seq - 1) as usize] != digest {
                self.fault = Some(FaultReport {
                    seq,
                    reason: "new view re-proposes a different digest for an executed sequence"
                        .into(),
                });
                return;
            }
            self.log.entry((seq, v)).or_default().pre_prepare = Some(pp);
            if self.id != primary {
                self.send_prepare(v, seq, digest);
            }
        }
        self.next_seq = max_seq;
        self.timer_armed = false;
        self.timer_epoch += 1;
        let seqs: Vec<u64> = self
            .log
            .range((1, 0)..)
            .filter(|((_, view), _)| *view == v)
            .map(|((s, _), _)| *s)
            .collect();
        for seq in seqs {
            self.check_progress(v, seq);
        }
        let buffered: Vec<PbftMessage> = std::mem::take(&mut self.buffer).into();
        for m in buffered {
            if m.view == v {
                self.dispatch(m);
            } else if m.view > v {
                self.buffer_message(m);
            }
        }
        self.try_propose();
        self.refresh_timer();
    }
}

fn slot_prepared(slot: &Slot, digest: &Digest, f: usize) -> bool {
    [slot.pre_prepare.as_ref(), slot.fetched.as_ref()]
        .into_iter()
        .flatten()
        .any(|pp| pp.digest == *digest && backup_prepares(slot, pp) >= prepare_quorum(f))
}

fn backup_prepares(slot: &Slot, pp: &PbftMessage) -> usize {
    slot.prepares
        .get(&pp.digest)
        .map_or(0, |m| m.keys().filter(|s| **s != pp.sender).count())
}

/// A digest other than `have` backed by f+1 commits or 2f backup
/// prepares, with the replicas that vouched for it.
fn certified_elsewhere(
    slot: &Slot,
    f: usize,
    primary: ReplicaId,
    have: Option<Digest>,
) -> Option<(Digest, BTreeSet<ReplicaId>)> {
    let by_commit = slot
        .commits
        .iter()
        .find(|(d, s)| s.len() > f && Some(**d) != have)
        .map(|(d, s)| (*d, s.clone()));
    by_commit.or_else(|| {
        slot.prepares.iter().find_map(|(d, m)| {
            let backups: BTreeSet<ReplicaId> = m.keys().copied().filter(|&s| s != primary).collect();
            (backups.len() >= prepare_quorum(f) && Some(*d) != have).then_some((*d, backups))
        })
    })
}

/// The pre-prepare (received or fetched) that has a prepared certificate.
fn prepared_pre_prepare(slot: &Slot, f: usize) -> Option<&PbftMessage> {
    [slot.pre_prepare.as_ref(), slot.fetched.as_ref()]
        .into_iter()
        .flatten()
        .find(|pp| backup_prepares(slot, pp) >= prepare_quorum(f))
}
