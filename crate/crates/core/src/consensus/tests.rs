use std::collections::VecDeque;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::ledger::{create_genesis, Block, Chain, ChainConfig, Digest, Payload, Transaction, Value};
use crate::membership::{MembershipRegistry, Role, Signer};

const N: usize = 4;

fn secret(id: &str) -> Vec<u8> {
    format!("key-{id}").into_bytes()
}

struct Setup {
    registry: Arc<MembershipRegistry>,
    chain: Chain,
    gw: Signer,
    validators: Vec<String>,
}

fn setup() -> Setup {
    let admin = Signer::keyed("admin", secret("admin"));
    let mut registry = MembershipRegistry::with_admin("admin", secret("admin"));
    let p = registry.authenticate("admin", &admin.prove(b"boot")).unwrap();
    let validators: Vec<String> = (0..N).map(|i| format!("v{i}")).collect();
    for v in &validators {
        registry.register_member(&p, v, Role::Validator, secret(v)).unwrap();
    }
    registry.register_member(&p, "gw-1", Role::Gateway, secret("gw-1")).unwrap();
    registry.register_member(&p, "d1", Role::Device, secret("d1")).unwrap();
    let mut chain = Chain::new(create_genesis(&ChainConfig { chain_id: "t".into() }));
    let regs = vec![
        Transaction::new_signed(
            Payload::RegisterDevice {
                device_id: "d1".into(),
                owner: "gw-1".into(),
            },
            &admin,
            0,
        ),
        Transaction::new_signed(
            Payload::RegisterSensor {
                sensor_id: "s1".into(),
                device_id: "d1".into(),
                initial: Value::from_int(0),
            },
            &admin,
            1,
        ),
    ];
    let b = Block::seal(1, chain.tip().block_hash, "admin", 1, regs);
    chain.append_block(b, &registry).unwrap();
    Setup {
        registry: Arc::new(registry),
        chain,
        gw: Signer::keyed("gw-1", secret("gw-1")),
        validators,
    }
}

fn update(gw: &Signer, value: i64, nonce: u64) -> Transaction {
    Transaction::new_signed(
        Payload::SensorUpdate {
            sensor_id: "s1".into(),
            value: Value::from_int(value),
        },
        gw,
        nonce,
    )
}

type DropRule = Box<dyn Fn(ReplicaId, ReplicaId, &PbftMessage) -> bool>;

/// Delivers messages in FIFO order with no timing; timers fire only on
/// request.
struct Pump {
    replicas: Vec<Replica>,
    queue: VecDeque<(ReplicaId, ReplicaId, PbftMessage)>,
    replies: Vec<ClientReply>,
    timers: Vec<Option<u64>>,
    drop: DropRule,
}

impl Pump {
    fn new(s: &Setup) -> Self {
        let cfg = ConsensusConfig::new(s.validators.clone());
        let replicas = (0..N)
            .map(|i| {
                Replica::new(
                    i,
                    cfg.clone(),
                    Signer::keyed(&s.validators[i], secret(&s.validators[i])),
                    s.registry.clone(),
                    s.chain.clone(),
                )
            })
            .collect();
        Self {
            replicas,
            queue: VecDeque::new(),
            replies: Vec::new(),
            timers: vec![None; N],
            drop: Box::new(|_, _, _| false),
        }
    }

    fn absorb(&mut self, from: ReplicaId, outs: Vec<Outbound>) {
        for o in outs {
            match o {
                Outbound::Send { to, msg } => {
                    if !(self.drop)(from, to, &msg) {
                        self.queue.push_back((from, to, msg));
                    }
                }
                Outbound::Reply { reply, .. } => self.replies.push(reply),
                Outbound::Timer { id, .. } => self.timers[from] = Some(id),
            }
        }
    }

    fn submit(&mut self, txs: &[Transaction]) {
        for i in 0..N {
            let batch = txs.iter().map(|t| (t.clone(), "gw-1".to_string())).collect();
            let outs = self.replicas[i].on_request(batch);
            self.absorb(i, outs);
        }
    }

    fn run(&mut self) {
        let mut steps = 0;
        while let Some((_, to, msg)) = self.queue.pop_front() {
            let outs = self.replicas[to].on_message(msg);
            self.absorb(to, outs);
            steps += 1;
            assert!(steps < 100_000, "pump did not quiesce");
        }
    }

    fn fire_timers(&mut self, who: &[ReplicaId]) {
        for &i in who {
            if let Some(id) = self.timers[i].take() {
                let outs = self.replicas[i].on_timer(id);
                self.absorb(i, outs);
            }
        }
        self.run();
    }
}

#[test]
fn primary_rotation_and_quorums() {
    assert_eq!(primary_of(0, 4), 0);
    assert_eq!(primary_of(5, 4), 1);
    assert_eq!(primary_of(7, 7), 0);
    assert_eq!(max_faults(4), 1);
    assert_eq!(max_faults(7), 2);
    assert_eq!(max_faults(6), 1);
    assert_eq!(prepare_quorum(1), 2);
    assert_eq!(commit_quorum(2), 5);
}

#[test]
fn honest_round_commits_everywhere() {
    let s = setup();
    let mut p = Pump::new(&s);
    p.submit(&[update(&s.gw, 11, 1), update(&s.gw, 23, 2)]);
    p.run();
    for r in &p.replicas {
        assert_eq!(r.last_executed(), 1);
        assert_eq!(r.chain().height(), 2);
        assert_eq!(r.view(), 0);
        assert!(!r.timer_armed());
        assert_eq!(r.pending_len(), 0);
    }
    let tip = p.replicas[0].chain().tip().clone();
    assert!(p.replicas.iter().all(|r| r.chain().tip() == &tip));
    assert_eq!(tip.txs.len(), 2);
    assert_eq!(p.replies.len(), 2 * N);
    assert!(p
        .replies
        .iter()
        .all(|r| r.outcome == Outcome::Committed { height: 2 }));
}

#[test]
fn invalid_request_is_ordered_as_a_refusal() {
    let s = setup();
    let mut p = Pump::new(&s);
    let bad = Transaction::new_signed(
        Payload::SensorUpdate {
            sensor_id: "nope".into(),
            value: Value::from_int(1),
        },
        &s.gw,
        5,
    );
    p.submit(&[update(&s.gw, 1, 1), bad.clone()]);
    p.run();
    let rejected: Vec<_> = p.replies.iter().filter(|r| r.tx_id == bad.tx_id).collect();
    assert_eq!(rejected.len(), N);
    assert!(rejected.iter().all(|r| r.outcome
        == Outcome::Rejected {
            reason: "UnknownSensor".into()
        }));
    assert_eq!(p.replicas[2].chain().tip().txs.len(), 1);
}

#[test]
fn requests_are_batched_in_arrival_order_across_blocks() {
    let s = setup();
    let mut p = Pump::new(&s);
    p.submit(&[update(&s.gw, 1, 1)]);
    p.run();
    p.submit(&[update(&s.gw, 2, 2), update(&s.gw, 3, 3)]);
    p.run();
    let r = &p.replicas[3];
    assert_eq!(r.last_executed(), 2);
    assert_eq!(r.chain().state().sensors()["s1"].last_value, Value::from_int(3));
}

#[test]
fn duplicate_request_gets_cached_reply() {
    let s = setup();
    let mut p = Pump::new(&s);
    let tx = update(&s.gw, 4, 1);
    p.submit(std::slice::from_ref(&tx));
    p.run();
    let before = p.replies.len();
    p.submit(&[tx]);
    p.run();
    assert_eq!(p.replies.len(), before + N);
    assert_eq!(p.replicas[0].last_executed(), 1);
}

#[test]
fn unauthorized_client_is_ignored() {
    let s = setup();
    let mut p = Pump::new(&s);
    let outs = p.replicas[0].on_request(vec![(update(&s.gw, 1, 1), "d1".into())]);
    assert!(outs.is_empty());
    assert_eq!(p.replicas[0].suspicions()[0].kind, SuspicionKind::UnauthorizedClient);
}

#[test]
fn silent_primary_is_replaced() {
    let s = setup();
    let mut p = Pump::new(&s);
    p.drop = Box::new(|from, _, _| from == 0);
    p.submit(&[update(&s.gw, 9, 1)]);
    p.run();
    assert!(p.replicas[1..].iter().all(|r| r.last_executed() == 0 && r.timer_armed()));
    p.fire_timers(&[1, 2, 3]);
    for r in &p.replicas[1..] {
        assert_eq!(r.view(), 1);
        assert_eq!(r.mode(), Mode::Normal);
        assert_eq!(r.last_executed(), 1);
        assert_eq!(r.chain().tip().proposer, "v1");
    }
}

#[test]
fn view_change_keeps_prepared_proposal() {
    let s = setup();
    let mut p = Pump::new(&s);
    // everyone prepares but no commit gets through
    p.drop = Box::new(|_, _, m| m.phase() == Phase::Commit);
    p.submit(&[update(&s.gw, 5, 1)]);
    p.run();
    for r in &p.replicas {
        assert_eq!(r.last_executed(), 0);
    }
    assert!(p.replicas.iter().all(|r| r.suspicions().is_empty()));
    p.drop = Box::new(|_, _, _| false);
    p.fire_timers(&[0, 1, 2, 3]);
    let executed: Vec<_> = p.replicas.iter().map(|r| r.executed().to_vec()).collect();
    assert!(executed.iter().all(|e| e.len() == 1 && e == &executed[0]));
    for r in &p.replicas {
        assert_eq!(r.view(), 1);
        // the re-proposed block is the original one from the view-0 primary
        assert_eq!(r.chain().tip().proposer, "v0");
        assert_eq!(r.chain().state().sensors()["s1"].last_value, Value::from_int(5));
    }
}

#[test]
fn new_view_fills_gaps_with_null_blocks() {
    let s = setup();
    let mut p = Pump::new(&s);
    p.submit(&[update(&s.gw, 1, 1)]);
    p.run();
    // replica 3 misses the commits for seq 2
    p.drop = Box::new(|_, to, m| m.phase() == Phase::Commit || (to == 3 && m.seq == 2));
    p.submit(&[update(&s.gw, 2, 2)]);
    p.run();
    p.drop = Box::new(|_, _, _| false);
    p.fire_timers(&[0, 1, 2, 3]);
    let tips: Vec<_> = p.replicas.iter().map(|r| r.chain().tip().clone()).collect();
    assert!(tips.iter().all(|t| t == &tips[0]));
    assert_eq!(tips[0].height, 3);
}

#[test]
fn timeout_doubles_per_consecutive_view_change() {
    let s = setup();
    let mut p = Pump::new(&s);
    p.drop = Box::new(|_, _, _| true);
    p.submit(&[update(&s.gw, 1, 1)]);
    assert_eq!(p.replicas[2].current_timeout(), 50);
    p.fire_timers(&[2]);
    assert_eq!(p.replicas[2].current_timeout(), 100);
    assert_eq!(p.replicas[2].mode(), Mode::ViewChange);
    p.fire_timers(&[2]);
    assert_eq!(p.replicas[2].current_timeout(), 200);
    assert_eq!(p.replicas[2].view(), 2);
}

#[test]
fn idle_timer_does_not_change_view() {
    let s = setup();
    let mut p = Pump::new(&s);
    let outs = p.replicas[1].on_timer(0);
    assert!(outs.is_empty());
    assert_eq!(p.replicas[1].view(), 0);
}

#[test]
fn equivocating_pre_prepare_is_suspected() {
    let s = setup();
    let mut p = Pump::new(&s);
    p.drop = Box::new(|_, _, _| true);
    let tx = update(&s.gw, 1, 1);
    let outs = p.replicas[0].on_request(vec![(tx, "gw-1".into())]);
    let pp = outs
        .iter()
        .find_map(|o| match o {
            Outbound::Send { to: 1, msg } => Some(msg.clone()),
            _ => None,
        })
        .unwrap();
    let twin = forge_conflicting(&pp, &Signer::keyed("v0", secret("v0"))).unwrap();
    assert_ne!(twin.digest, pp.digest);
    p.replicas[1].on_message(pp);
    p.replicas[1].on_message(twin);
    assert_eq!(p.replicas[1].suspicions()[0].kind, SuspicionKind::Equivocation);
}

#[test]
fn replica_fed_the_twin_fetches_the_prepared_proposal() {
    let s = setup();
    let mut p = Pump::new(&s);
    let tx = update(&s.gw, 1, 1);
    let v0 = Signer::keyed("v0", secret("v0"));
    let outs: Vec<Outbound> = p.replicas[0]
        .on_request(vec![(tx, "gw-1".into())])
        .into_iter()
        .map(|o| match o {
            Outbound::Send { to: 3, msg } if msg.phase() == Phase::PrePrepare => Outbound::Send {
                to: 3,
                msg: forge_conflicting(&msg, &v0).unwrap(),
            },
            other => other,
        })
        .collect();
    p.absorb(0, outs);
    p.run();
    let tip = p.replicas[1].chain().tip().clone();
    assert_eq!(tip.height, 2);
    for r in &p.replicas {
        assert_eq!(r.chain().tip(), &tip, "replica {}", r.id());
    }
    assert_eq!(p.replicas[3].suspicions().len(), 0);
}

#[test]
fn forged_signature_is_rejected() {
    let s = setup();
    let mut p = Pump::new(&s);
    let mut msg = PbftMessage::signed(0, 1, Digest::ZERO, 0, Body::Commit, &Signer::keyed("v0", secret("v0")));
    msg.signature[0] ^= 1;
    assert!(p.replicas[1].on_message(msg).is_empty());
    assert_eq!(p.replicas[1].suspicions()[0].kind, SuspicionKind::BadSignature);
}

#[test]
fn messages_beyond_watermark_are_ignored() {
    let s = setup();
    let mut p = Pump::new(&s);
    let v2 = Signer::keyed("v2", secret("v2"));
    let msg = PbftMessage::signed(0, 257, Digest::ZERO, 2, Body::Commit, &v2);
    p.replicas[1].on_message(msg);
    assert!(!p.replicas[1].committed_local(0, 257, &Digest::ZERO));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `prepared` holds exactly when the PrePrepare is present and at least
    /// 2f distinct non-primary replicas sent a matching Prepare.
    #[test]
    fn prepared_matches_brute_force(mask in 0u8..16, deliver_pp: bool, dup in 0usize..4) {
        let s = setup();
        let mut p = Pump::new(&s);
        p.drop = Box::new(|_, _, _| true);
        let outs = p.replicas[0].on_request(vec![(update(&s.gw, 1, 1), "gw-1".into())]);
        let pp = outs.iter().find_map(|o| match o {
            Outbound::Send { to: 1, msg } => Some(msg.clone()),
            _ => None,
        }).unwrap();
        let target = 1;
        let replica = &mut p.replicas[target];
        replica.on_request(vec![(update(&s.gw, 1, 1), "gw-1".into())]);
        if deliver_pp {
            replica.on_message(pp.clone());
        }
        let mut senders = std::collections::BTreeSet::new();
        if deliver_pp {
            senders.insert(target);
        }
        for i in 0..N {
            if mask & (1 << i) != 0 && i != target {
                let signer = Signer::keyed(&s.validators[i], secret(&s.validators[i]));
                let m = PbftMessage::signed(0, 1, pp.digest, i, Body::Prepare, &signer);
                replica.on_message(m.clone());
                if i == dup {
                    replica.on_message(m);
                }
                if i != 0 {
                    senders.insert(i);
                }
            }
        }
        let expected = deliver_pp && senders.len() >= 2;
        prop_assert_eq!(replica.prepared(0, 1, &pp.digest), expected);
        prop_assert!(!replica.committed_local(0, 1, &pp.digest));
    }
}
