//! Replicated log: Sequence Paxos with an elected leader as sole proposer.
//!
//! Every slot is a Paxos instance. A leader runs phase 1 once for all slots
//! from its decided prefix onwards using its election ballot, adopts values it
//! finds, and then feeds the client's values one slot at a time.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::election::{leader_alive, quorum_size, Ballot, ElectionConfig, ElectionMsg, ElectionTimer, Elector};
use crate::error::{Error, Result};
use crate::fdetect::{drive_heartbeat, drive_interval, DetectorConfig, DetectorState};
use crate::paxos::Value;
use crate::simnet::{Ctx, Pid, Process, Tick};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReplicatedLog {
    entries: Vec<Value>,
}

impl ReplicatedLog {
    pub fn from_entries(entries: Vec<Value>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[Value] {
        &self.entries
    }

    pub fn decided_upto(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, slot: usize) -> Option<&Value> {
        self.entries.get(slot)
    }

    /// Appends the decision for the next contiguous slot.
    pub fn seq_append_decided(&mut self, slot: usize, value: Value) -> Result<()> {
        if slot != self.entries.len() {
            return Err(Error::OutOfOrder {
                expected: self.entries.len(),
                got: slot,
            });
        }
        self.entries.push(value);
        Ok(())
    }
}

/// True iff, for every pair of logs, the shorter is a prefix of the longer.
pub fn prefix_check<'a>(logs: impl IntoIterator<Item = &'a ReplicatedLog>) -> bool {
    let logs: Vec<&ReplicatedLog> = logs.into_iter().collect();
    let Some(longest) = logs.iter().max_by_key(|l| l.entries.len()) else {
        return true;
    };
    logs.iter()
        .all(|l| longest.entries[..l.entries.len()] == l.entries[..])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RaftRole {
    Leader,
    Acceptor,
    Learner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleRule {
    /// Even ranks accept, odd ranks learn.
    Alg1,
    /// The rank after the leader learns, everyone else accepts.
    Alg2,
}

pub fn raft_assign_roles(rank: Pid, leader: Pid, n: usize, rule: RoleRule) -> Result<RaftRole> {
    for p in [rank, leader] {
        if p >= n {
            return Err(Error::PidOutOfRange { pid: p, n });
        }
    }
    if rank == leader {
        return Ok(RaftRole::Leader);
    }
    Ok(match rule {
        RoleRule::Alg1 if rank % 2 == 0 => RaftRole::Acceptor,
        RoleRule::Alg1 => RaftRole::Learner,
        RoleRule::Alg2 if rank == (leader + 1) % n => RaftRole::Learner,
        RoleRule::Alg2 => RaftRole::Acceptor,
    })
}

/// Which processes vote on slots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleMode {
    /// Every process, the leader included, is an acceptor.
    #[default]
    All,
    Alg1,
    Alg2,
}

pub fn acceptors_for(mode: RoleMode, leader: Pid, n: usize) -> BTreeSet<Pid> {
    let rule = match mode {
        RoleMode::All => return (0..n).collect(),
        RoleMode::Alg1 => RoleRule::Alg1,
        RoleMode::Alg2 => RoleRule::Alg2,
    };
    (0..n)
        .filter(|r| raft_assign_roles(*r, leader, n, rule) == Ok(RaftRole::Acceptor))
        .collect()
}

pub type Accepted = Vec<(usize, Ballot, Value)>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LogMsg {
    Prepare { ballot: Ballot, from_slot: usize },
    Promise { ballot: Ballot, accepted: Accepted },
    Nack { ballot: Ballot, promised: Ballot },
    Accept { ballot: Ballot, slot: usize, value: Value },
    Accepted { ballot: Ballot, slot: usize, value: Value },
    Decided { slot: usize, value: Value },
}

/// Acceptor for all slots: one promise, one accepted value per slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MultiAcceptor {
    pub promised: Option<Ballot>,
    pub accepted: BTreeMap<usize, (Ballot, Value)>,
}

impl MultiAcceptor {
    pub fn on_prepare(&mut self, ballot: Ballot, from_slot: usize) -> LogMsg {
        match self.promised {
            Some(p) if ballot < p => LogMsg::Nack { ballot, promised: p },
            _ => {
                self.promised = Some(ballot);
                LogMsg::Promise {
                    ballot,
                    accepted: self
                        .accepted
                        .range(from_slot..)
                        .map(|(s, (b, v))| (*s, *b, v.clone()))
                        .collect(),
                }
            }
        }
    }

    pub fn on_accept(&mut self, ballot: Ballot, slot: usize, value: Value) -> LogMsg {
        match self.promised {
            Some(p) if ballot < p => LogMsg::Nack { ballot, promised: p },
            _ => {
                self.promised = Some(ballot);
                self.accepted.insert(slot, (ballot, value.clone()));
                LogMsg::Accepted { ballot, slot, value }
            }
        }
    }
}

/// Learner that buffers out-of-order decisions and applies them contiguously.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotLearner {
    pub log: ReplicatedLog,
    votes: BTreeMap<(usize, Ballot, Value), BTreeSet<Pid>>,
    buffered: BTreeMap<usize, Value>,
}

impl SlotLearner {
    /// Counts one acceptor's vote; returns the slots newly appended to the log.
    pub fn on_accepted(&mut self, from: Pid, ballot: Ballot, slot: usize, value: Value, quorum: usize) -> Result<Vec<usize>> {
        if slot < self.log.decided_upto() && self.log.get(slot) == Some(&value) {
            return Ok(Vec::new());
        }
        let voters = self.votes.entry((slot, ballot, value.clone())).or_default();
        voters.insert(from);
        if voters.len() < quorum {
            return Ok(Vec::new());
        }
        self.on_decided(slot, value)
    }

    pub fn on_decided(&mut self, slot: usize, value: Value) -> Result<Vec<usize>> {
        let known = self.log.get(slot).or_else(|| self.buffered.get(&slot));
        if let Some(v) = known {
            if *v != value {
                return Err(Error::InvariantViolation(format!("slot {slot} decided both {v:?} and {value:?}")));
            }
            return Ok(Vec::new());
        }
        self.buffered.insert(slot, value);
        let mut applied = Vec::new();
        while let Some(v) = self.buffered.remove(&self.log.decided_upto()) {
            let s = self.log.decided_upto();
            self.log.seq_append_decided(s, v)?;
            applied.push(s);
        }
        let upto = self.log.decided_upto();
        self.votes.retain(|(s, _, _), _| *s >= upto);
        Ok(applied)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeaderPhase {
    Preparing,
    Active,
}

#[derive(Debug, Clone)]
struct LeaderState {
    ballot: Ballot,
    phase: LeaderPhase,
    acceptors: BTreeSet<Pid>,
    promises: BTreeMap<Pid, Accepted>,
    adopted: BTreeMap<usize, (Ballot, Value)>,
    in_flight: BTreeMap<usize, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqConfig {
    /// The client's values; slot `i` carries `values[i]`.
    pub values: Vec<Value>,
    pub roles: RoleMode,
    /// Elect the leader; otherwise process 0 leads for the whole run.
    pub elect: bool,
    /// The first elected leader halts once its log holds this many entries.
    pub crash_leader_after_slot: Option<usize>,
    pub detector: DetectorConfig,
    /// Resend period for unanswered prepares and accepts.
    pub retry_timeout: Tick,
}

impl Default for SeqConfig {
    fn default() -> Self {
        Self {
            values: Vec::new(),
            roles: RoleMode::All,
            elect: true,
            crash_leader_after_slot: None,
            detector: DetectorConfig::default(),
            retry_timeout: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftMsg {
    Heartbeat {
        leader: Option<(Pid, Ballot)>,
        decided_upto: usize,
    },
    Election(ElectionMsg),
    Log(LogMsg),
}

impl From<ElectionMsg> for RaftMsg {
    fn from(m: ElectionMsg) -> Self {
        RaftMsg::Election(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftTimer {
    Heartbeat,
    Election(ElectionTimer),
    Retry(Ballot),
}

impl From<ElectionTimer> for RaftTimer {
    fn from(t: ElectionTimer) -> Self {
        RaftTimer::Election(t)
    }
}

type RCtx<'a> = Ctx<'a, RaftMsg, RaftTimer>;

/// One replica: failure detector, election, acceptor, learner and, while it
/// leads, the proposer.
#[derive(Debug, Clone)]
pub struct RaftNode {
    me: Pid,
    n: usize,
    config: SeqConfig,
    pub detector: DetectorState,
    pub elector: Elector,
    pub acceptor: MultiAcceptor,
    pub learner: SlotLearner,
    leader: Option<LeaderState>,
    current: Option<(Pid, Ballot)>,
    terms_seen: usize,
}

impl RaftNode {
    pub fn new(me: Pid, n: usize, config: &SeqConfig, max_delay: Tick) -> Self {
        let election = ElectionConfig::for_channel(&config.detector, max_delay);
        Self {
            me,
            n,
            detector: DetectorState::new(me, 0..n, &config.detector),
            elector: Elector::new(me, 0..n, election),
            acceptor: MultiAcceptor::default(),
            learner: SlotLearner::default(),
            leader: None,
            current: None,
            terms_seen: 0,
            config: config.clone(),
        }
    }

    pub fn cluster(n: usize, config: &SeqConfig, max_delay: Tick) -> Vec<Self> {
        (0..n).map(|p| Self::new(p, n, config, max_delay)).collect()
    }

    pub fn log(&self) -> &ReplicatedLog {
        &self.learner.log
    }

    pub fn is_leading(&self) -> bool {
        self.leader.is_some()
    }

    pub fn current_leader(&self) -> Option<Pid> {
        self.current.map(|(l, _)| l)
    }

    fn quorum(&self) -> usize {
        let leader = self.current.map_or(0, |(l, _)| l);
        quorum_size(acceptors_for(self.config.roles, leader, self.n).len()).unwrap_or(1)
    }

    fn is_acceptor(&self) -> bool {
        self.current
            .is_some_and(|(l, _)| acceptors_for(self.config.roles, l, self.n).contains(&self.me))
    }

    fn install(&mut self, ctx: &mut RCtx<'_>, leader: Pid, ballot: Ballot) {
        if self.current.is_some_and(|(_, b)| b >= ballot) {
            return;
        }
        self.current = Some((leader, ballot));
        self.terms_seen += 1;
        self.leader = None;
        if leader != self.me {
            return;
        }
        let acceptors = acceptors_for(self.config.roles, leader, self.n);
        let from_slot = self.learner.log.decided_upto();
        ctx.send_all(acceptors.iter().copied(), RaftMsg::Log(LogMsg::Prepare { ballot, from_slot }));
        ctx.set_timer(self.config.retry_timeout, RaftTimer::Retry(ballot));
        self.leader = Some(LeaderState {
            ballot,
            phase: LeaderPhase::Preparing,
            acceptors,
            promises: BTreeMap::new(),
            adopted: BTreeMap::new(),
            in_flight: BTreeMap::new(),
        });
    }

    /// Proposes every adopted slot and the client's next value.
    fn pump(&mut self, ctx: &mut RCtx<'_>) {
        let upto = self.learner.log.decided_upto();
        let Some(ls) = &mut self.leader else {
            return;
        };
        if ls.phase != LeaderPhase::Active {
            return;
        }
        let mut slots: Vec<(usize, Value)> = ls
            .adopted
            .range(upto..)
            .map(|(s, (_, v))| (*s, v.clone()))
            .collect();
        if !ls.adopted.contains_key(&upto) {
            if let Some(v) = self.config.values.get(upto) {
                slots.push((upto, v.clone()));
            }
        }
        for (slot, value) in slots {
            if ls.in_flight.contains_key(&slot) {
                continue;
            }
            ls.in_flight.insert(slot, value.clone());
            let ballot = ls.ballot;
            ctx.send_all(ls.acceptors.iter().copied(), RaftMsg::Log(LogMsg::Accept { ballot, slot, value }));
        }
    }

    fn apply_decisions(&mut self, ctx: &mut RCtx<'_>, result: Result<Vec<usize>>) {
        match result {
            Ok(slots) => {
                for s in &slots {
                    let v = &self.learner.log.entries()[*s];
                    ctx.decide(format!("slot={s} value={v}"));
                }
                if slots.is_empty() {
                    return;
                }
                let len = self.learner.log.decided_upto();
                if let Some(ls) = &mut self.leader {
                    ls.in_flight.retain(|s, _| *s >= len);
                }
                let planned = self.config.crash_leader_after_slot;
                if self.leader.is_some() && self.terms_seen == 1 && planned.is_some_and(|k| len >= k) {
                    ctx.note(format!("leader {} halts after slot {}", self.me, len - 1));
                    ctx.halt();
                    return;
                }
                self.pump(ctx);
            }
            Err(e) => ctx.fault(e.to_string()),
        }
    }

    fn on_log(&mut self, ctx: &mut RCtx<'_>, from: Pid, msg: LogMsg) {
        match msg {
            LogMsg::Prepare { ballot, from_slot } => {
                let reply = self.acceptor.on_prepare(ballot, from_slot);
                ctx.send(from, RaftMsg::Log(reply));
            }
            LogMsg::Accept { ballot, slot, value } => match self.acceptor.on_accept(ballot, slot, value) {
                accepted @ LogMsg::Accepted { .. } => ctx.broadcast(RaftMsg::Log(accepted)),
                nack => ctx.send(from, RaftMsg::Log(nack)),
            },
            LogMsg::Promise { ballot, accepted } => {
                let quorum = self.quorum();
                let Some(ls) = &mut self.leader else {
                    return;
                };
                if ls.ballot != ballot || ls.phase != LeaderPhase::Preparing {
                    return;
                }
                ls.promises.insert(from, accepted);
                if ls.promises.len() < quorum {
                    return;
                }
                for (slot, b, v) in ls.promises.values().flatten() {
                    let e = ls.adopted.entry(*slot).or_insert((*b, v.clone()));
                    if *b > e.0 {
                        *e = (*b, v.clone());
                    }
                }
                ls.phase = LeaderPhase::Active;
                ctx.note(format!("leading ballot {ballot} from slot {}", self.learner.log.decided_upto()));
                self.pump(ctx);
            }
            LogMsg::Nack { ballot, promised } => {
                if self.leader.as_ref().is_some_and(|ls| ls.ballot == ballot && promised > ballot) {
                    ctx.note(format!("superseded by {promised}"));
                    self.leader = None;
                    self.elector.state.observe(promised);
                }
            }
            LogMsg::Accepted { ballot, slot, value } => {
                let quorum = self.quorum();
                let r = self.learner.on_accepted(from, ballot, slot, value, quorum);
                self.apply_decisions(ctx, r);
            }
            LogMsg::Decided { slot, value } => {
                let r = self.learner.on_decided(slot, value);
                self.apply_decisions(ctx, r);
            }
        }
    }
}

impl Process for RaftNode {
    type Msg = RaftMsg;
    type Timer = RaftTimer;

    fn on_start(&mut self, ctx: &mut RCtx<'_>) {
        ctx.set_timer(self.detector.heartbeat_interval(), RaftTimer::Heartbeat);
        if self.config.elect {
            self.elector.on_start(ctx);
        } else {
            self.install(ctx, 0, Ballot::new(1, 0));
        }
    }

    fn on_message(&mut self, ctx: &mut RCtx<'_>, from: Pid, msg: RaftMsg) {
        if from != self.me {
            drive_heartbeat(&mut self.detector, ctx, from);
        }
        match msg {
            RaftMsg::Heartbeat { leader, decided_upto } => {
                if self.config.elect {
                    if let Some(l) = self.elector.catch_up(ctx, leader) {
                        let b = self.elector.settled().map(|(_, b)| b).expect("just settled");
                        self.install(ctx, l, b);
                    }
                }
                if self.is_leading() {
                    let log = self.learner.log.entries();
                    for slot in decided_upto..log.len() {
                        ctx.send(from, RaftMsg::Log(LogMsg::Decided { slot, value: log[slot].clone() }));
                    }
                }
            }
            RaftMsg::Election(m) => {
                if self.elector.on_message(ctx, from, m).is_some() {
                    let (l, b) = self.elector.settled().expect("just settled");
                    self.install(ctx, l, b);
                }
            }
            RaftMsg::Log(m) => {
                let acceptor_msg = matches!(m, LogMsg::Prepare { .. } | LogMsg::Accept { .. });
                if acceptor_msg && self.current.is_some() && !self.is_acceptor() {
                    return;
                }
                self.on_log(ctx, from, m);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut RCtx<'_>, timer: RaftTimer) {
        match timer {
            RaftTimer::Heartbeat => {
                let hb = RaftMsg::Heartbeat {
                    leader: self.current,
                    decided_upto: self.learner.log.decided_upto(),
                };
                let suspected = drive_interval(&mut self.detector, ctx, hb);
                ctx.set_timer(self.detector.heartbeat_interval(), RaftTimer::Heartbeat);
                if self.config.elect && self.elector.leader().is_some_and(|l| suspected.contains(&l)) {
                    self.elector.leader_suspected(ctx);
                }
            }
            RaftTimer::Election(t) => {
                let alive = leader_alive(&self.detector, &self.elector);
                self.elector.on_timer(ctx, t, alive);
            }
            RaftTimer::Retry(b) => {
                let upto = self.learner.log.decided_upto();
                let Some(ls) = &self.leader else {
                    return;
                };
                if ls.ballot != b {
                    return;
                }
                match ls.phase {
                    LeaderPhase::Preparing => {
                        let missing = ls.acceptors.iter().filter(|a| !ls.promises.contains_key(a)).copied();
                        ctx.send_all(missing, RaftMsg::Log(LogMsg::Prepare { ballot: b, from_slot: upto }));
                    }
                    LeaderPhase::Active => {
                        for (slot, value) in ls.in_flight.range(upto..) {
                            let m = LogMsg::Accept { ballot: b, slot: *slot, value: value.clone() };
                            ctx.send_all(ls.acceptors.iter().copied(), RaftMsg::Log(m));
                        }
                    }
                }
                ctx.set_timer(self.config.retry_timeout, RaftTimer::Retry(b));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(v: &[&str]) -> ReplicatedLog {
        ReplicatedLog::from_entries(v.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn append_in_order_only() {
        let mut l = ReplicatedLog::default();
        l.seq_append_decided(0, "a".into()).unwrap();
        assert_eq!(l, log(&["a"]));
        assert_eq!(l.seq_append_decided(2, "c".into()), Err(Error::OutOfOrder { expected: 1, got: 2 }));
        assert_eq!(l, log(&["a"]));
        l.seq_append_decided(1, "b".into()).unwrap();
        assert_eq!(l, log(&["a", "b"]));
        assert_eq!(l.decided_upto(), 2);
    }

    #[test]
    fn prefix_examples() {
        assert!(prefix_check([&log(&["a", "b"]), &log(&["a", "b", "c"])]));
        assert!(!prefix_check([&log(&["a", "b"]), &log(&["a", "x"])]));
        assert!(prefix_check([&log(&[]), &log(&[]), &log(&[])]));
        assert!(prefix_check(std::iter::empty()));
    }

    #[test]
    fn role_examples() {
        assert_eq!(raft_assign_roles(2, 1, 5, RoleRule::Alg1), Ok(RaftRole::Acceptor));
        assert_eq!(raft_assign_roles(3, 1, 5, RoleRule::Alg1), Ok(RaftRole::Learner));
        assert_eq!(raft_assign_roles(0, 3, 4, RoleRule::Alg2), Ok(RaftRole::Learner));
        assert_eq!(raft_assign_roles(1, 3, 4, RoleRule::Alg2), Ok(RaftRole::Acceptor));
        for rule in [RoleRule::Alg1, RoleRule::Alg2] {
            assert_eq!(raft_assign_roles(4, 4, 5, rule), Ok(RaftRole::Leader));
        }
        assert!(raft_assign_roles(0, 5, 5, RoleRule::Alg1).is_err());
    }

    #[test]
    fn exactly_one_leader_per_assignment() {
        for n in 1..8 {
            for leader in 0..n {
                for rule in [RoleRule::Alg1, RoleRule::Alg2] {
                    let leaders = (0..n)
                        .filter(|r| raft_assign_roles(*r, leader, n, rule) == Ok(RaftRole::Leader))
                        .count();
                    assert_eq!(leaders, 1);
                }
            }
        }
    }

    #[test]
    fn acceptor_sets() {
        assert_eq!(acceptors_for(RoleMode::All, 2, 3), BTreeSet::from([0, 1, 2]));
        assert_eq!(acceptors_for(RoleMode::Alg1, 1, 5), BTreeSet::from([0, 2, 4]));
        assert_eq!(acceptors_for(RoleMode::Alg2, 3, 4), BTreeSet::from([1, 2]));
    }

    #[test]
    fn promise_reports_accepted_from_slot() {
        let mut a = MultiAcceptor::default();
        let b1 = Ballot::new(1, 0);
        a.on_prepare(b1, 0);
        a.on_accept(b1, 0, "a".into());
        a.on_accept(b1, 1, "b".into());
        let b2 = Ballot::new(2, 1);
        assert_eq!(
            a.on_prepare(b2, 1),
            LogMsg::Promise { ballot: b2, accepted: vec![(1, b1, "b".into())] }
        );
        assert_eq!(a.on_accept(b1, 2, "c".into()), LogMsg::Nack { ballot: b1, promised: b2 });
    }

    #[test]
    fn learner_buffers_gaps() {
        let mut l = SlotLearner::default();
        let b = Ballot::new(1, 0);
        assert!(l.on_accepted(0, b, 1, "b".into(), 2).unwrap().is_empty());
        assert!(l.on_accepted(1, b, 1, "b".into(), 2).unwrap().is_empty());
        assert_eq!(l.log.decided_upto(), 0);
        l.on_accepted(0, b, 0, "a".into(), 2).unwrap();
        assert_eq!(l.on_accepted(2, b, 0, "a".into(), 2).unwrap(), vec![0, 1]);
        assert_eq!(l.log, log(&["a", "b"]));
    }

    #[test]
    fn learner_rejects_rewrite() {
        let mut l = SlotLearner::default();
        l.on_decided(0, "a".into()).unwrap();
        assert!(l.on_decided(0, "a".into()).unwrap().is_empty());
        assert!(matches!(l.on_decided(0, "x".into()), Err(Error::InvariantViolation(_))));
    }
}
