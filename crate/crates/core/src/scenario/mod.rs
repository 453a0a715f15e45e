//! Declarative scenarios: a TOML file naming a protocol, its parameters, the
//! simulated network, a step budget and the invariants to check.

mod demo;
mod run;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use demo::{clock_condition, ClockDemoNode, ClockDemoParams};
pub use run::{execute, run, sweep, sweep_with, FaultInfo, InvariantResult, RunOutput, RunReport, SweepReport};

use crate::antientropy::{GossipConfig, PutOp, SyncConfig, SyncMode};
use crate::commit::{CommitConfig, CrashPoint, Variant, Vote};
use crate::error::{Error, Result};
use crate::fdetect::DetectorConfig;
use crate::paxos::{PaxosConfig, Value};
use crate::seqlog::{RoleMode, SeqConfig};
use crate::simnet::{Pid, SimConfig, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    LamportDemo,
    VectorDemo,
    Fdetect,
    Election,
    Paxos,
    SeqPaxos,
    Raft,
    #[serde(rename = "2pc")]
    TwoPc,
    #[serde(rename = "3pc")]
    ThreePc,
    LwwSync,
    Gossip,
    MerkleDiff,
}

impl Protocol {
    pub const ALL: [Protocol; 12] = [
        Protocol::LamportDemo,
        Protocol::VectorDemo,
        Protocol::Fdetect,
        Protocol::Election,
        Protocol::Paxos,
        Protocol::SeqPaxos,
        Protocol::Raft,
        Protocol::TwoPc,
        Protocol::ThreePc,
        Protocol::LwwSync,
        Protocol::Gossip,
        Protocol::MerkleDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::LamportDemo => "lamport-demo",
            Protocol::VectorDemo => "vector-demo",
            Protocol::Fdetect => "fdetect",
            Protocol::Election => "election",
            Protocol::Paxos => "paxos",
            Protocol::SeqPaxos => "seq-paxos",
            Protocol::Raft => "raft",
            Protocol::TwoPc => "2pc",
            Protocol::ThreePc => "3pc",
            Protocol::LwwSync => "lww-sync",
            Protocol::Gossip => "gossip",
            Protocol::MerkleDiff => "merkle-diff",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown protocol {name:?}")))
    }

    /// Invariants a scenario may list under `expectations`.
    pub fn invariants(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Protocol::LamportDemo | Protocol::VectorDemo => &[(
                "clock-condition",
                "stamps increase along every process and every send/receive pair",
            )],
            Protocol::Fdetect => &[
                ("completeness", "every crashed process is suspected by every correct process"),
                ("accuracy", "no correct process is suspected by a correct process at the end"),
            ],
            Protocol::Election => &[
                ("agreement", "all correct processes settled on the same leader"),
                ("termination", "every correct process settled on a leader"),
            ],
            Protocol::Paxos => &[
                ("agreement", "no two learners decided different values"),
                ("validity", "every decided value was proposed"),
                ("termination", "every correct learner decided"),
            ],
            Protocol::SeqPaxos | Protocol::Raft => &[
                ("prefix", "after every step each log is a prefix of the longest"),
                ("agreement", "all correct replicas hold identical logs"),
                ("termination", "every correct replica holds every value"),
            ],
            Protocol::TwoPc | Protocol::ThreePc => &[
                ("atomicity", "no participant committed while another aborted"),
                ("termination", "every correct participant reached a terminal state"),
            ],
            Protocol::LwwSync | Protocol::MerkleDiff => &[("convergence", "all correct replicas hold identical maps")],
            Protocol::Gossip => &[("convergence", "every correct process learned the rumor")],
        }
    }

    /// The `[params]` section with every default filled in.
    pub fn default_params(self) -> String {
        #[derive(Serialize)]
        struct Section<T> {
            params: T,
        }
        fn section<T: Serialize>(params: T) -> String {
            toml::to_string(&Section { params }).expect("defaults serialize")
        }
        match self {
            Protocol::LamportDemo | Protocol::VectorDemo => section(ClockDemoParams::default()),
            Protocol::Fdetect => section(FdParams::default()),
            Protocol::Election => section(ElectionParams::default()),
            Protocol::Paxos => section(PaxosParams::default()),
            Protocol::SeqPaxos | Protocol::Raft => section(SeqParams::default()),
            Protocol::TwoPc | Protocol::ThreePc => section(CommitParams::default()),
            Protocol::LwwSync | Protocol::MerkleDiff => section(SyncParams::default()),
            Protocol::Gossip => section(GossipConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdParams {
    pub heartbeat_interval: Tick,
    pub initial_timeout: Tick,
    /// Defaults to half the initial timeout.
    pub timeout_increment: Option<Tick>,
}

impl Default for FdParams {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            heartbeat_interval: d.heartbeat_interval,
            initial_timeout: d.initial_timeout,
            timeout_increment: None,
        }
    }
}

impl FdParams {
    pub fn detector(&self) -> DetectorConfig {
        let mut d = DetectorConfig::with_timeout(self.heartbeat_interval, self.initial_timeout);
        if let Some(i) = self.timeout_increment {
            d.timeout_increment = i;
        }
        d
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectionParams {
    #[serde(flatten)]
    pub detector: FdParams,
    /// Only these processes stand at time zero; by default everyone may.
    pub initial_candidates: Option<Vec<Pid>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proposal {
    pub pid: Pid,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaxosParams {
    pub proposers: Vec<Proposal>,
    pub retry_timeout: Tick,
    pub max_backoff: Tick,
    pub snapshot: bool,
}

impl Default for PaxosParams {
    fn default() -> Self {
        let d = PaxosConfig::default();
        Self {
            proposers: d.proposers.into_iter().map(|(pid, value)| Proposal { pid, value }).collect(),
            retry_timeout: d.retry_timeout,
            max_backoff: d.max_backoff,
            snapshot: d.snapshot,
        }
    }
}

impl PaxosParams {
    pub fn config(&self) -> PaxosConfig {
        PaxosConfig {
            proposers: self.proposers.iter().map(|p| (p.pid, p.value.clone())).collect(),
            retry_timeout: self.retry_timeout,
            max_backoff: self.max_backoff,
            snapshot: self.snapshot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqParams {
    pub values: Vec<Value>,
    pub roles: RoleMode,
    pub crash_leader_after_slot: Option<usize>,
    pub retry_timeout: Tick,
    #[serde(flatten)]
    pub detector: FdParams,
}

impl Default for SeqParams {
    fn default() -> Self {
        Self {
            values: vec!["a".into(), "b".into(), "c".into()],
            roles: RoleMode::All,
            crash_leader_after_slot: None,
            retry_timeout: SeqConfig::default().retry_timeout,
            detector: FdParams::default(),
        }
    }
}

impl SeqParams {
    pub fn config(&self, elect: bool) -> SeqConfig {
        SeqConfig {
            values: self.values.clone(),
            roles: self.roles,
            elect,
            crash_leader_after_slot: self.crash_leader_after_slot,
            detector: self.detector.detector(),
            retry_timeout: self.retry_timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommitParams {
    pub tx_id: u64,
    pub votes: Vec<Vote>,
    pub crash_point: CrashPoint,
    pub vote_timeout: Option<Tick>,
}

impl Default for CommitParams {
    fn default() -> Self {
        Self {
            tx_id: 1,
            votes: Vec::new(),
            crash_point: CrashPoint::None,
            vote_timeout: None,
        }
    }
}

impl CommitParams {
    pub fn config(&self, variant: Variant) -> CommitConfig {
        CommitConfig {
            variant,
            tx_id: self.tx_id,
            votes: self.votes.clone(),
            crash_point: self.crash_point,
            vote_timeout: self.vote_timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncParams {
    pub puts: Vec<PutOp>,
    pub interval: Tick,
    pub exchanges: u32,
}

impl Default for SyncParams {
    fn default() -> Self {
        let d = SyncConfig::default();
        Self {
            puts: Vec::new(),
            interval: d.interval,
            exchanges: d.exchanges,
        }
    }
}

impl SyncParams {
    pub fn config(&self, mode: SyncMode) -> SyncConfig {
        SyncConfig {
            mode,
            puts: self.puts.clone(),
            interval: self.interval,
            exchanges: self.exchanges,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Clock(ClockDemoParams),
    Fdetect(FdParams),
    Election(ElectionParams),
    Paxos(PaxosParams),
    Seq(SeqParams),
    Commit(CommitParams),
    Sync(SyncParams),
    Gossip(GossipConfig),
}

fn default_budget() -> u64 {
    100_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    protocol: Protocol,
    #[serde(default = "default_budget")]
    step_budget: u64,
    #[serde(default)]
    expectations: Vec<String>,
    sim: SimConfig,
    #[serde(default)]
    params: toml::Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub step_budget: u64,
    pub expectations: Vec<String>,
    pub sim: SimConfig,
    pub params: Params,
}

/// Line of the first `key = ...` inside the `[params]` tables.
fn param_line(text: &str, key: &str) -> Option<usize> {
    let mut in_params = false;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim_start();
        if t.starts_with('[') {
            in_params = t.starts_with("[params");
            continue;
        }
        if in_params {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn typed<T: DeserializeOwned>(table: &toml::Table, text: &str) -> Result<T> {
    table.clone().try_into::<T>().map_err(|e| {
        let msg = e.message().to_string();
        let field = msg.split('`').nth(1).unwrap_or_default();
        match param_line(text, field) {
            Some(line) => Error::Config(format!("params: {msg} (line {line})")),
            None => Error::Config(format!("params: {msg}")),
        }
    })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let params = match raw.protocol {
            Protocol::LamportDemo | Protocol::VectorDemo => Params::Clock(typed(&raw.params, text)?),
            Protocol::Fdetect => Params::Fdetect(typed(&raw.params, text)?),
            Protocol::Election => Params::Election(typed(&raw.params, text)?),
            Protocol::Paxos => Params::Paxos(typed(&raw.params, text)?),
            Protocol::SeqPaxos | Protocol::Raft => Params::Seq(typed(&raw.params, text)?),
            Protocol::TwoPc | Protocol::ThreePc => Params::Commit(typed(&raw.params, text)?),
            Protocol::LwwSync | Protocol::MerkleDiff => Params::Sync(typed(&raw.params, text)?),
            Protocol::Gossip => Params::Gossip(typed(&raw.params, text)?),
        };
        let sc = Scenario {
            name: raw.name,
            protocol: raw.protocol,
            step_budget: raw.step_budget,
            expectations: raw.expectations,
            sim: raw.sim,
            params,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("name {:?} must be a plain file stem", self.name)));
        }
        let n = self.sim.n_processes;
        let known = self.protocol.invariants();
        for e in &self.expectations {
            if !known.iter().any(|(k, _)| k == e) {
                return Err(Error::Config(format!(
                    "expectation {e:?} is not defined for {}",
                    self.protocol.name()
                )));
            }
        }
        let check_pid = |pid: Pid| {
            if pid >= n {
                Err(Error::PidOutOfRange { pid, n })
            } else {
                Ok(())
            }
        };
        match &self.params {
            Params::Clock(p) if !(0.0..=1.0).contains(&p.send_probability) => {
                return Err(Error::Config("send_probability must be within [0, 1]".into()));
            }
            Params::Fdetect(p) => p.detector().validate()?,
            Params::Election(p) => {
                p.detector.detector().validate()?;
                for c in p.initial_candidates.iter().flatten() {
                    check_pid(*c)?;
                }
            }
            Params::Seq(p) => p.detector.detector().validate()?,
            Params::Paxos(p) => {
                for pr in &p.proposers {
                    check_pid(pr.pid)?;
                }
            }
            Params::Commit(_) if n < 2 => {
                return Err(Error::Config("commit needs a coordinator and at least one participant".into()));
            }
            Params::Commit(p) if p.votes.len() > n - 1 => {
                return Err(Error::Config(format!("{} votes for {} participants", p.votes.len(), n - 1)));
            }
            Params::Sync(p) => {
                for op in &p.puts {
                    check_pid(op.pid)?;
                }
            }
            Params::Gossip(p) => {
                for pid in &p.initially_infected {
                    check_pid(*pid)?;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Text printed by `explain`.
pub fn explain(protocol: Protocol) -> String {
    let mut out = format!("protocol: {}\n\ndefaults:\n", protocol.name());
    out.push_str(&protocol.default_params());
    out.push_str("\ninvariants:\n");
    for (name, what) in protocol.invariants() {
        out.push_str(&format!("  {name}: {what}\n"));
    }
    out
}
