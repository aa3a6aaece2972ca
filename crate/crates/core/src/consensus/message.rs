use std::fmt;

use crate::codec::Canonical;
use crate::ledger::{Block, Digest, Transaction, TxRejection};
use crate::membership::Signer;

pub type ReplicaId = usize;

/// A transaction the primary refused, with the number of block
/// transactions that precede it in evaluation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedTx {
    pub tx: Transaction,
    pub client: String,
    pub position: usize,
    pub reason: TxRejection,
}

/// What a primary proposes for one sequence number: the block plus the
/// requests it refused, so that refusals are ordered like everything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub block: Block,
    /// Submitting gateway for each block transaction, aligned with
    /// `block.txs`.
    pub clients: Vec<String>,
    pub rejected: Vec<RejectedTx>,
}

impl Proposal {
    pub fn digest(&self) -> Digest {
        let mut c = Canonical::new();
        c.tag(b"proposal")
            .fixed(self.block.block_hash.as_bytes())
            .u32(self.clients.len() as u32);
        for client in &self.clients {
            c.str(client);
        }
        c.u32(self.rejected.len() as u32);
        for r in &self.rejected {
            c.fixed(r.tx.tx_id.as_bytes())
                .bytes(&r.tx.signing_bytes())
                .bytes(&r.tx.signature)
                .str(&r.client)
                .u64(r.position as u64)
                .str(&r.reason.to_string());
        }
        Digest::of(c.as_slice())
    }

    pub fn is_null(&self) -> bool {
        self.block.txs.is_empty() && self.rejected.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Request,
    PrePrepare,
    Prepare,
    Commit,
    ViewChange,
    NewView,
    Fetch,
    FetchReply,
}

impl Phase {
    fn tag(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Request => "Request",
            Phase::PrePrepare => "PrePrepare",
            Phase::Prepare => "Prepare",
            Phase::Commit => "Commit",
            Phase::ViewChange => "ViewChange",
            Phase::NewView => "NewView",
            Phase::Fetch => "Fetch",
            Phase::FetchReply => "FetchReply",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A PrePrepare together with 2f matching Prepares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedCert {
    pub pre_prepare: PbftMessage,
    pub prepares: Vec<PbftMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewChangeBody {
    pub last_executed: u64,
    pub prepared: Vec<PreparedCert>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewViewBody {
    pub view_changes: Vec<PbftMessage>,
    pub pre_prepares: Vec<PbftMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    /// A client request relayed by a backup to the primary.
    Request { tx: Transaction, client: String },
    PrePrepare(Box<Proposal>),
    Prepare,
    Commit,
    ViewChange(Box<ViewChangeBody>),
    NewView(Box<NewViewBody>),
    /// Asks a peer for the committed proposal at `(view, seq, digest)`.
    Fetch,
    /// Carries the original signed PrePrepare.
    FetchReply(Box<PbftMessage>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbftMessage {
    pub view: u64,
    pub seq: u64,
    pub digest: Digest,
    pub sender: ReplicaId,
    pub body: Body,
    pub signature: Vec<u8>,
}

impl PbftMessage {
    pub fn phase(&self) -> Phase {
        match self.body {
            Body::Request { .. } => Phase::Request,
            Body::PrePrepare(_) => Phase::PrePrepare,
            Body::Prepare => Phase::Prepare,
            Body::Commit => Phase::Commit,
            Body::ViewChange(_) => Phase::ViewChange,
            Body::NewView(_) => Phase::NewView,
            Body::Fetch => Phase::Fetch,
            Body::FetchReply(_) => Phase::FetchReply,
        }
    }

    pub fn signed(
        view: u64,
        seq: u64,
        digest: Digest,
        sender: ReplicaId,
        body: Body,
        signer: &Signer,
    ) -> Self {
        let mut m = PbftMessage {
            view,
            seq,
            digest,
            sender,
            body,
            signature: Vec::new(),
        };
        m.signature = signer.sign(&m.signing_bytes());
        m
    }

    /// Canonical bytes covered by the signature. Nested messages contribute
    /// their own signing bytes and signatures.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut c = Canonical::new();
        c.tag(b"pbft")
            .u8(self.phase().tag())
            .u64(self.view)
            .u64(self.seq)
            .fixed(self.digest.as_bytes())
            .u32(self.sender as u32);
        match &self.body {
            Body::Request { tx, client } => {
                c.fixed(tx.tx_id.as_bytes())
                    .bytes(&tx.signing_bytes())
                    .bytes(&tx.signature)
                    .str(client);
            }
            Body::PrePrepare(p) => {
                c.fixed(p.digest().as_bytes());
            }
            Body::Prepare | Body::Commit | Body::Fetch => {}
            Body::ViewChange(vc) => {
                c.u64(vc.last_executed).u32(vc.prepared.len() as u32);
                for cert in &vc.prepared {
                    nested(&mut c, &cert.pre_prepare);
                    c.u32(cert.prepares.len() as u32);
                    for p in &cert.prepares {
                        nested(&mut c, p);
                    }
                }
            }
            Body::NewView(nv) => {
                c.u32(nv.view_changes.len() as u32);
                for m in &nv.view_changes {
                    nested(&mut c, m);
                }
                c.u32(nv.pre_prepares.len() as u32);
                for m in &nv.pre_prepares {
                    nested(&mut c, m);
                }
            }
            Body::FetchReply(m) => nested(&mut c, m),
        }
        c.finish()
    }

    pub fn proposal(&self) -> Option<&Proposal> {
        match &self.body {
            Body::PrePrepare(p) => Some(p),
            _ => None,
        }
    }

    /// Trace line: phase, view, seq, digest prefix.
    pub fn summary(&self) -> String {
        format!(
            "{} v={} n={} d={}",
            self.phase(),
            self.view,
            self.seq,
            self.digest.short()
        )
    }
}

fn nested(c: &mut Canonical, m: &PbftMessage) {
    c.bytes(&m.signing_bytes()).bytes(&m.signature);
}

/// Final result of a request as reported to its client.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Outcome {
    Committed { height: u64 },
    Rejected { reason: String },
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Committed { height } => write!(f, "committed@{height}"),
            Outcome::Rejected { reason } => write!(f, "rejected:{reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientReply {
    pub tx_id: Digest,
    pub outcome: Outcome,
    pub replica: ReplicaId,
}

/// What an equivocating node sends to the second half of its receivers.
/// PrePrepares get a sibling block with the last transaction dropped;
/// Prepares and Commits get a different digest. Other phases are sent
/// unchanged.
pub fn forge_conflicting(msg: &PbftMessage, signer: &Signer) -> Option<PbftMessage> {
    match &msg.body {
        Body::PrePrepare(p) => {
            let mut twin = (**p).clone();
            if !twin.block.txs.is_empty() {
                twin.block.txs.pop();
                twin.clients.pop();
                let b = &twin.block;
                twin.block = Block::seal(b.height, b.prev_hash, &b.proposer, b.timestamp, b.txs.clone());
            } else if !twin.rejected.is_empty() {
                twin.rejected.pop();
            } else {
                return None;
            }
            let digest = twin.digest();
            Some(PbftMessage::signed(
                msg.view,
                msg.seq,
                digest,
                msg.sender,
                Body::PrePrepare(Box::new(twin)),
                signer,
            ))
        }
        Body::Prepare | Body::Commit => {
            let mut c = Canonical::new();
            c.tag(b"twin").fixed(msg.digest.as_bytes());
            Some(PbftMessage::signed(
                msg.view,
                msg.seq,
                Digest::of(c.as_slice()),
                msg.sender,
                msg.body.clone(),
                signer,
            ))
        }
        _ => None,
    }
}
