//! Scenario files.
//!
//! Line-oriented; `#` starts a comment, blank lines are ignored. Directives:
//!
//! ```text
//! seed <u64>                      network and flow sampling seed (default 0)
//! corpus_seed <u64>               synthetic generator used for device flows
//! validators <n>                  replicas v0..v<n-1> (default 4)
//! delay <min> <max>               uniform message delay (default 1 10)
//! loss <p>                        per-message drop probability (default 0)
//! retransmit <t>                  gateway request retransmit period (default 300)
//! max_time <t>                    simulated time budget (default 1000000)
//! max_steps <n>                   event budget (default 5000000)
//! policy <alert-and-quarantine|alert-only>
//! fault <validator> <silent|equivocate|delay <extra>>
//! gateway <id>
//! device <id> <gateway> <sensor>
//! submit <time> <device> <value> <class name...>
//! ```
//!
//! `<validator>` is an index or a name such as `v0`. The class name is the
//! rest of the line and is matched like dataset labels, so `Web Attack XSS`
//! and `Web Attack – XSS` are the same class.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::consensus::max_faults;
use crate::gateway::Policy;
use crate::ids_data::synthetic::CORPUS_SEED;
use crate::ids_data::LabelMap;
use crate::ledger::Value;
use crate::netsim::{Behavior, Time};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ScenarioError {
    /// 0 for problems not tied to a line.
    pub line: usize,
    pub msg: String,
}

fn err(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceSpec {
    pub id: String,
    pub gateway: String,
    pub sensor: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub time: Time,
    pub device: String,
    pub value: Value,
    /// Index into the standard label map.
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub corpus_seed: u64,
    pub validators: usize,
    pub delay: (Time, Time),
    pub loss: f64,
    pub retransmit: Time,
    pub max_time: Time,
    pub max_steps: u64,
    pub policy: Policy,
    pub faults: Vec<(usize, Behavior)>,
    pub gateways: Vec<String>,
    pub devices: Vec<DeviceSpec>,
    pub submissions: Vec<Submission>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus_seed: CORPUS_SEED,
            validators: 4,
            delay: (1, 10),
            loss: 0.0,
            retransmit: 300,
            max_time: 1_000_000,
            max_steps: 5_000_000,
            policy: Policy::default(),
            faults: Vec::new(),
            gateways: Vec::new(),
            devices: Vec::new(),
            submissions: Vec::new(),
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, ScenarioError> {
    s.parse().map_err(|_| err(line, format!("bad {what} `{s}`")))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let labels = LabelMap::standard();
        let mut sc = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let args = &words[1..];
            let want = |n: usize| {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(err(line, format!("`{}` takes {n} argument(s)", words[0])))
                }
            };
            match words[0] {
                "seed" => {
                    want(1)?;
                    sc.seed = num(line, "seed", args[0])?;
                }
                "corpus_seed" => {
                    want(1)?;
                    sc.corpus_seed = num(line, "seed", args[0])?;
                }
                "validators" => {
                    want(1)?;
                    sc.validators = num(line, "count", args[0])?;
                }
                "delay" => {
                    want(2)?;
                    sc.delay = (num(line, "delay", args[0])?, num(line, "delay", args[1])?);
                }
                "loss" => {
                    want(1)?;
                    sc.loss = num(line, "probability", args[0])?;
                }
                "retransmit" => {
                    want(1)?;
                    sc.retransmit = num(line, "time", args[0])?;
                }
                "max_time" => {
                    want(1)?;
                    sc.max_time = num(line, "time", args[0])?;
                }
                "max_steps" => {
                    want(1)?;
                    sc.max_steps = num(line, "count", args[0])?;
                }
                "policy" => {
                    want(1)?;
                    sc.policy = args[0].parse().map_err(|e: String| err(line, e))?;
                }
                "fault" => {
                    if args.len() < 2 {
                        return Err(err(line, "`fault` needs a validator and a behavior"));
                    }
                    let v = args[0].strip_prefix('v').unwrap_or(args[0]);
                    let v: usize = num(line, "validator", v)?;
                    let behavior = match &args[1..] {
                        ["silent"] => Behavior::Silent,
                        ["equivocate"] => Behavior::Equivocate,
                        ["honest"] => Behavior::Honest,
                        ["delay", extra] => Behavior::DelayInjector {
                            extra: num(line, "delay", extra)?,
                        },
                        _ => return Err(err(line, format!("unknown behavior `{}`", args[1..].join(" ")))),
                    };
                    sc.faults.push((v, behavior));
                }
                "gateway" => {
                    want(1)?;
                    sc.gateways.push(args[0].to_string());
                }
                "device" => {
                    want(3)?;
                    sc.devices.push(DeviceSpec {
                        id: args[0].to_string(),
                        gateway: args[1].to_string(),
                        sensor: args[2].to_string(),
                    });
                }
                "submit" => {
                    if args.len() < 4 {
                        return Err(err(line, "`submit` needs time, device, value and class"));
                    }
                    let value: f64 = num(line, "value", args[2])?;
                    if !value.is_finite() {
                        return Err(err(line, format!("bad value `{}`", args[2])));
                    }
                    let class_text = args[3..].join(" ");
                    let class = labels
                        .resolve(&class_text)
                        .ok_or_else(|| err(line, format!("unknown class `{class_text}`")))?;
                    sc.submissions.push(Submission {
                        time: num(line, "time", args[0])?,
                        device: args[1].to_string(),
                        value: Value::from_f64(value),
                        class,
                    });
                }
                other => return Err(err(line, format!("unknown directive `{other}`"))),
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Structural checks shared by parsed and programmatic scenarios.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.validators;
        if n < 4 {
            return Err(err(0, format!("need at least 4 validators, got {n}")));
        }
        if self.delay.0 > self.delay.1 {
            return Err(err(0, "delay min exceeds max"));
        }
        if !(0.0..1.0).contains(&self.loss) {
            return Err(err(0, format!("loss {} outside [0, 1)", self.loss)));
        }
        if self.retransmit == 0 {
            return Err(err(0, "retransmit period must be positive"));
        }
        let mut faulty = BTreeSet::new();
        for (v, _) in &self.faults {
            if *v >= n {
                return Err(err(0, format!("fault on unknown validator v{v}")));
            }
            if !faulty.insert(*v) {
                return Err(err(0, format!("two faults on v{v}")));
            }
        }
        let byzantine = self
            .faults
            .iter()
            .filter(|(_, b)| matches!(b, Behavior::Silent | Behavior::Equivocate))
            .count();
        if byzantine > max_faults(n) {
            return Err(err(0, format!("{byzantine} faulty validators exceed f = {}", max_faults(n))));
        }
        let validator_names: Vec<String> = (0..n).map(validator_name).collect();
        let mut ids: BTreeSet<&str> = validator_names.iter().map(String::as_str).collect();
        ids.insert(ADMIN);
        for g in &self.gateways {
            if !ids.insert(g) {
                return Err(err(0, format!("duplicate member `{g}`")));
            }
        }
        let mut sensors = BTreeSet::new();
        for d in &self.devices {
            if !ids.insert(&d.id) {
                return Err(err(0, format!("duplicate member `{}`", d.id)));
            }
            if !self.gateways.contains(&d.gateway) {
                return Err(err(0, format!("device `{}` names unknown gateway `{}`", d.id, d.gateway)));
            }
            if !sensors.insert(&d.sensor) {
                return Err(err(0, format!("duplicate sensor `{}`", d.sensor)));
            }
        }
        for s in &self.submissions {
            if !self.devices.iter().any(|d| d.id == s.device) {
                return Err(err(0, format!("submission from unknown device `{}`", s.device)));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same scenario.
    pub fn to_text(&self) -> String {
        let labels = LabelMap::standard();
        let mut out = String::new();
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "corpus_seed {}", self.corpus_seed);
        let _ = writeln!(out, "validators {}", self.validators);
        let _ = writeln!(out, "delay {} {}", self.delay.0, self.delay.1);
        let _ = writeln!(out, "loss {}", self.loss);
        let _ = writeln!(out, "retransmit {}", self.retransmit);
        let _ = writeln!(out, "max_time {}", self.max_time);
        let _ = writeln!(out, "max_steps {}", self.max_steps);
        let _ = writeln!(out, "policy {}", self.policy.as_str());
        for (v, b) in &self.faults {
            match b {
                Behavior::DelayInjector { extra } => {
                    let _ = writeln!(out, "fault v{v} delay {extra}");
                }
                other => {
                    let _ = writeln!(out, "fault v{v} {}", other.name());
                }
            }
        }
        for g in &self.gateways {
            let _ = writeln!(out, "gateway {g}");
        }
        for d in &self.devices {
            let _ = writeln!(out, "device {} {} {}", d.id, d.gateway, d.sensor);
        }
        for s in &self.submissions {
            let _ = writeln!(
                out,
                "submit {} {} {} {}",
                s.time,
                s.device,
                s.value,
                labels.name(s.class)
            );
        }
        out
    }
}

/// Member that signs the bootstrap registrations.
pub const ADMIN: &str = "admin";

pub fn validator_name(i: usize) -> String {
    format!("v{i}")
}

/// Scenario files shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 4] = [
    ("honest", include_str!("../../scenarios/honest.scn")),
    ("silent_primary", include_str!("../../scenarios/silent_primary.scn")),
    ("equivocating_primary", include_str!("../../scenarios/equivocating_primary.scn")),
    ("mixed_traffic", include_str!("../../scenarios/mixed_traffic.scn")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::parse(text).expect("bundled scenario parses"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_directives() {
        let sc = Scenario::parse(
            "seed 9\nvalidators 4\nfault v0 silent  # primary\ngateway gw-1\n\
             device d1 gw-1 s1\nsubmit 5 d1 23 Benign\nsubmit 7 d1 1.5 Web Attack XSS\n",
        )
        .unwrap();
        assert_eq!(sc.seed, 9);
        assert_eq!(sc.faults, vec![(0, Behavior::Silent)]);
        assert_eq!(sc.submissions[0].value, Value::from_int(23));
        assert_eq!(LabelMap::standard().name(sc.submissions[1].class), "Web XSS");
        assert_eq!(Scenario::parse(&sc.to_text()).unwrap(), sc);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("seed 1\n\nbogus 3\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = Scenario::parse("gateway g\ndevice d g s\nsubmit 1 d 2 Nope\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.msg.contains("unknown class"));
        let e = Scenario::parse("fault 1 silent\nfault 2 equivocate\n").unwrap_err();
        assert!(e.msg.contains("exceed"));
        let e = Scenario::parse("device d nowhere s\n").unwrap_err();
        assert!(e.msg.contains("unknown gateway"));
    }

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            let sc = bundled(name).unwrap();
            assert!(!sc.submissions.is_empty(), "{name}");
        }
        assert_eq!(bundled("honest").unwrap().submissions.len(), 20);
    }
}
