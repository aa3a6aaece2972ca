//! Deterministic discrete-event network simulator.
//!
//! Nodes are pure state machines ([`Process`]). Every outbound message gets a
//! delay drawn uniformly from `[delay_min, delay_max]` using a ChaCha8
//! generator seeded from [`NetConfig::seed`], then is dropped independently
//! with probability `loss`. Draw order is fixed: for each delivered event,
//! outputs are processed in the order the handler returned them; each send
//! draws its loss sample (only when `loss > 0`) and then its delay. Events
//! are ordered by `(deliver_at, insertion index)`, so a run is a pure
//! function of topology, fault profiles and seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Time = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input<M> {
    Message { from: NodeId, msg: M },
    Timer(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output<M> {
    Send { to: NodeId, msg: M },
    /// Fires `Input::Timer(id)` on the emitting node after `after` units.
    Timer { id: u64, after: Time },
}

pub trait Process<M> {
    fn handle(&mut self, now: Time, input: Input<M>) -> Vec<Output<M>>;
}

/// Produces the conflicting twin of a message for equivocating nodes.
pub trait Forge<M> {
    fn conflicting(&self, sender: NodeId, msg: &M) -> Option<M>;
}

/// One-line description used in the message trace.
pub trait TraceLine {
    fn trace_line(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Drops every outbound message.
    Silent,
    /// Sends each broadcast message unchanged to the lower half of its
    /// receivers (sorted by id, rounded up) and the forged twin to the rest.
    Equivocate,
    /// Adds a fixed extra delay to every outbound message.
    DelayInjector { extra: Time },
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Honest => "honest",
            Behavior::Silent => "silent",
            Behavior::Equivocate => "equivocate",
            Behavior::DelayInjector { .. } => "delay_injector",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultProfile {
    pub node: NodeId,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub seed: u64,
    pub delay_min: Time,
    pub delay_max: Time,
    pub loss: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            delay_min: 1,
            delay_max: 10,
            loss: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event at {at} is before the current time {now}")]
    InPast { at: Time, now: Time },
    #[error("event queue is empty")]
    EmptyQueue,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<M> {
    pub deliver_at: Time,
    pub target: NodeId,
    pub input: Input<M>,
}

struct Queued<M> {
    at: Time,
    index: u64,
    event: SimEvent<M>,
}

impl<M> PartialEq for Queued<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.index) == (other.at, other.index)
    }
}
impl<M> Eq for Queued<M> {}
impl<M> PartialOrd for Queued<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Queued<M> {
    // min-heap on (at, index)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.index).cmp(&(self.at, self.index))
    }
}

/// Transforms a node's outbound batch according to its fault profile.
/// Timers are never affected.
pub fn apply_fault<M: Clone + PartialEq>(
    behavior: Behavior,
    sender: NodeId,
    outputs: Vec<Output<M>>,
    forge: Option<&dyn Forge<M>>,
) -> Vec<Output<M>> {
    match behavior {
        Behavior::Honest | Behavior::DelayInjector { .. } => outputs,
        Behavior::Silent => outputs
            .into_iter()
            .filter(|o| matches!(o, Output::Timer { .. }))
            .collect(),
        Behavior::Equivocate => {
            let mut timers = Vec::new();
            // distinct messages in first-appearance order with their receivers
            let mut groups: Vec<(M, Vec<NodeId>)> = Vec::new();
            for o in outputs {
                match o {
                    Output::Timer { .. } => timers.push(o),
                    Output::Send { to, msg } => match groups.iter_mut().find(|(m, _)| *m == msg) {
                        Some((_, rs)) => rs.push(to),
                        None => groups.push((msg, vec![to])),
                    },
                }
            }
            let mut out = Vec::new();
            for (msg, mut receivers) in groups {
                receivers.sort();
                let split = receivers.len().div_ceil(2);
                let twin = if receivers.len() > 1 {
                    forge.and_then(|f| f.conflicting(sender, &msg))
                } else {
                    None
                };
                for (i, to) in receivers.into_iter().enumerate() {
                    let msg = match &twin {
                        Some(t) if i >= split => t.clone(),
                        _ => msg.clone(),
                    };
                    out.push(Output::Send { to, msg });
                }
            }
            out.extend(timers);
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub time: Time,
    pub from: NodeId,
    pub to: NodeId,
    pub line: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub steps: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub quiescent: bool,
}

pub struct Simulator<M, P> {
    now: Time,
    next_index: u64,
    queue: BinaryHeap<Queued<M>>,
    nodes: Vec<P>,
    behaviors: Vec<Behavior>,
    config: NetConfig,
    rng: ChaCha8Rng,
    forge: Option<Box<dyn Forge<M>>>,
    record_trace: bool,
    trace: Vec<TraceEntry>,
    stats: RunStats,
}

impl<M, P> Simulator<M, P>
where
    M: Clone + PartialEq + TraceLine,
    P: Process<M>,
{
    pub fn new(nodes: Vec<P>, config: NetConfig) -> Self {
        let n = nodes.len();
        Self {
            now: 0,
            next_index: 0,
            queue: BinaryHeap::new(),
            nodes,
            behaviors: vec![Behavior::Honest; n],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            forge: None,
            record_trace: true,
            trace: Vec::new(),
            stats: RunStats::default(),
        }
    }

    pub fn set_fault(&mut self, profile: FaultProfile) -> Result<(), SimError> {
        let slot = self
            .behaviors
            .get_mut(profile.node.0)
            .ok_or(SimError::UnknownNode(profile.node))?;
        *slot = profile.behavior;
        Ok(())
    }

    pub fn set_forge(&mut self, forge: Box<dyn Forge<M>>) {
        self.forge = Some(forge);
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn nodes(&self) -> &[P] {
        &self.nodes
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut P> {
        self.nodes.get_mut(id.0)
    }

    pub fn behavior(&self, id: NodeId) -> Behavior {
        self.behaviors[id.0]
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, event: SimEvent<M>) -> Result<(), SimError> {
        if event.deliver_at < self.now {
            return Err(SimError::InPast {
                at: event.deliver_at,
                now: self.now,
            });
        }
        if event.target.0 >= self.nodes.len() {
            return Err(SimError::UnknownNode(event.target));
        }
        self.queue.push(Queued {
            at: event.deliver_at,
            index: self.next_index,
            event,
        });
        self.next_index += 1;
        Ok(())
    }

    /// Delivers the next event and schedules whatever the target emits.
    pub fn step(&mut self) -> Result<SimEvent<M>, SimError> {
        let Queued { at, event, .. } = self.queue.pop().ok_or(SimError::EmptyQueue)?;
        self.now = at;
        self.stats.steps += 1;
        if let Input::Message { from, msg } = &event.input {
            self.stats.delivered += 1;
            if self.record_trace {
                self.trace.push(TraceEntry {
                    time: at,
                    from: *from,
                    to: event.target,
                    line: msg.trace_line(),
                });
            }
        }
        let target = event.target;
        let outputs = self.nodes[target.0].handle(at, event.input.clone());
        let behavior = self.behaviors[target.0];
        let outputs = apply_fault(behavior, target, outputs, self.forge.as_deref());
        let extra = match behavior {
            Behavior::DelayInjector { extra } => extra,
            _ => 0,
        };
        for o in outputs {
            match o {
                Output::Timer { id, after } => self.push(at + after, target, Input::Timer(id)),
                Output::Send { to, msg } => {
                    if self.config.loss > 0.0 && self.rng.random::<f64>() < self.config.loss {
                        self.stats.dropped += 1;
                        continue;
                    }
                    let delay = self
                        .rng
                        .random_range(self.config.delay_min..=self.config.delay_max);
                    self.push(at + delay + extra, to, Input::Message { from: target, msg });
                }
            }
        }
        Ok(event)
    }

    fn push(&mut self, at: Time, target: NodeId, input: Input<M>) {
        self.queue.push(Queued {
            at,
            index: self.next_index,
            event: SimEvent {
                deliver_at: at,
                target,
                input,
            },
        });
        self.next_index += 1;
    }

    /// Steps until the queue drains, simulated time passes `max_time`, or
    /// `max_steps` events have been delivered.
    pub fn run(&mut self, max_time: Time, max_steps: u64) -> RunStats {
        let start = self.stats.steps;
        loop {
            match self.queue.peek() {
                None => {
                    self.stats.quiescent = true;
                    break;
                }
                Some(q) if q.at > max_time => break,
                Some(_) if self.stats.steps - start >= max_steps => break,
                Some(_) => {
                    self.step().expect("queue is non-empty");
                }
            }
        }
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Ping(u32);

    impl TraceLine for Ping {
        fn trace_line(&self) -> String {
            format!("ping {}", self.0)
        }
    }

    /// Forwards a decremented counter to the next node until it hits zero.
    struct Relay {
        n: usize,
        me: usize,
        seen: Vec<u32>,
    }

    impl Process<Ping> for Relay {
        fn handle(&mut self, _now: Time, input: Input<Ping>) -> Vec<Output<Ping>> {
            match input {
                Input::Message { msg, .. } => {
                    self.seen.push(msg.0);
                    if msg.0 == 0 {
                        return vec![];
                    }
                    vec![Output::Send {
                        to: NodeId((self.me + 1) % self.n),
                        msg: Ping(msg.0 - 1),
                    }]
                }
                Input::Timer(_) => vec![],
            }
        }
    }

    fn relays(n: usize) -> Vec<Relay> {
        (0..n)
            .map(|me| Relay {
                n,
                me,
                seen: vec![],
            })
            .collect()
    }

    fn ev(at: Time, to: usize, v: u32) -> SimEvent<Ping> {
        SimEvent {
            deliver_at: at,
            target: NodeId(to),
            input: Input::Message {
                from: NodeId(to),
                msg: Ping(v),
            },
        }
    }

    #[test]
    fn schedule_then_step_delivers() {
        let mut sim = Simulator::new(relays(2), NetConfig::default());
        sim.schedule(ev(7, 0, 0)).unwrap();
        let e = sim.step().unwrap();
        assert_eq!(e.deliver_at, 7);
        assert_eq!(sim.now(), 7);
        assert_eq!(sim.step(), Err(SimError::EmptyQueue));
        assert_eq!(
            sim.schedule(ev(3, 0, 0)),
            Err(SimError::InPast { at: 3, now: 7 })
        );
    }

    #[test]
    fn same_time_events_keep_insertion_order() {
        let mut sim = Simulator::new(relays(1), NetConfig::default());
        for v in [0, 0, 0] {
            sim.schedule(ev(5, 0, v)).unwrap();
        }
        sim.schedule(SimEvent {
            deliver_at: 5,
            target: NodeId(0),
            input: Input::Timer(9),
        })
        .unwrap();
        assert!(matches!(sim.step().unwrap().input, Input::Message { .. }));
        sim.step().unwrap();
        sim.step().unwrap();
        assert_eq!(sim.step().unwrap().input, Input::Timer(9));
    }

    #[test]
    fn bounded_relay_runs_to_quiescence() {
        let mut sim = Simulator::new(relays(3), NetConfig::default());
        sim.schedule(ev(0, 0, 20)).unwrap();
        let stats = sim.run(Time::MAX, 1_000);
        assert!(stats.quiescent);
        // exactly 21 deliveries: the counter reaches zero after 20 hops
        assert_eq!(stats.delivered, 21);
        let total: usize = sim.nodes().iter().map(|r| r.seen.len()).sum();
        assert_eq!(total, 21);
        assert!(sim.trace().windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let mut sim = Simulator::new(
                relays(4),
                NetConfig {
                    seed,
                    ..NetConfig::default()
                },
            );
            sim.schedule(ev(0, 0, 50)).unwrap();
            sim.run(Time::MAX, 10_000);
            sim.trace().to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn loss_drops_messages() {
        let mut sim = Simulator::new(
            relays(2),
            NetConfig {
                loss: 1.0,
                ..NetConfig::default()
            },
        );
        sim.schedule(ev(0, 0, 5)).unwrap();
        let stats = sim.run(Time::MAX, 100);
        assert_eq!(stats.delivered, 1);
        assert_eq!(stats.dropped, 1);
    }

    struct Flip;
    impl Forge<Ping> for Flip {
        fn conflicting(&self, _sender: NodeId, msg: &Ping) -> Option<Ping> {
            Some(Ping(msg.0 + 1000))
        }
    }

    fn broadcast(v: u32) -> Vec<Output<Ping>> {
        (1..4)
            .map(|i| Output::Send {
                to: NodeId(i),
                msg: Ping(v),
            })
            .chain([Output::Timer { id: 1, after: 5 }])
            .collect()
    }

    #[test]
    fn fault_transforms() {
        let out = apply_fault(Behavior::Honest, NodeId(0), broadcast(7), None);
        assert_eq!(out, broadcast(7));
        let out = apply_fault(Behavior::Silent, NodeId(0), broadcast(7), None);
        assert_eq!(out, vec![Output::Timer { id: 1, after: 5 }]);
        let out = apply_fault(Behavior::Equivocate, NodeId(0), broadcast(7), Some(&Flip));
        let sends: Vec<(usize, u32)> = out
            .iter()
            .filter_map(|o| match o {
                Output::Send { to, msg } => Some((to.0, msg.0)),
                _ => None,
            })
            .collect();
        assert_eq!(sends, vec![(1, 7), (2, 7), (3, 1007)]);
        assert!(out.contains(&Output::Timer { id: 1, after: 5 }));
    }

    #[test]
    fn delay_injector_adds_fixed_delay() {
        let mut sim = Simulator::new(
            relays(2),
            NetConfig {
                delay_min: 2,
                delay_max: 2,
                ..NetConfig::default()
            },
        );
        sim.set_fault(FaultProfile {
            node: NodeId(0),
            behavior: Behavior::DelayInjector { extra: 30 },
        })
        .unwrap();
        sim.schedule(ev(0, 0, 1)).unwrap();
        sim.step().unwrap();
        assert_eq!(sim.step().unwrap().deliver_at, 32);
    }
}
