//! Single-value (abortable) Paxos.
//!
//! Roles are separate state machines so they can be co-located freely: every
//! [`PaxosNode`] hosts an acceptor and a learner, and optionally a proposer.
//! A proposer whose round is rejected or times out retries with a higher
//! ballot after a random backoff.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::election::{quorum_size, Ballot};
use crate::error::{Error, Result};
use crate::simnet::{Ctx, Pid, Process, Tick};

pub type Value = String;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PaxosMsg {
    Prepare { ballot: Ballot },
    Promise { ballot: Ballot, accepted: Option<(Ballot, Value)> },
    /// Rejection of `ballot`, carrying the acceptor's promise.
    Nack { ballot: Ballot, promised: Ballot },
    Accept { ballot: Ballot, value: Value },
    Accepted { ballot: Ballot, value: Value },
    /// Sent by an undecided learner asking peers for the decision.
    Query,
    Decided { ballot: Ballot, value: Value },
}

pub type Outbox = Vec<(Pid, PaxosMsg)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProposerPhase {
    Idle,
    Prepared,
    Accepting,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProposerState {
    owner: Pid,
    acceptors: Vec<Pid>,
    ballot: Ballot,
    proposed_value: Option<Value>,
    promises: BTreeMap<Pid, Option<(Ballot, Value)>>,
    phase: ProposerPhase,
    max_round_seen: u64,
}

impl ProposerState {
    pub fn new(owner: Pid, acceptors: impl IntoIterator<Item = Pid>) -> Self {
        Self {
            owner,
            acceptors: acceptors.into_iter().collect(),
            ballot: Ballot::new(0, owner),
            proposed_value: None,
            promises: BTreeMap::new(),
            phase: ProposerPhase::Idle,
            max_round_seen: 0,
        }
    }

    pub fn ballot(&self) -> Ballot {
        self.ballot
    }

    pub fn phase(&self) -> ProposerPhase {
        self.phase
    }

    pub fn proposed_value(&self) -> Option<&Value> {
        self.proposed_value.as_ref()
    }

    fn quorum(&self) -> usize {
        quorum_size(self.acceptors.len()).unwrap_or(1)
    }

    /// Starts a round with a fresh ballot and sends `Prepare` to every acceptor.
    pub fn propose(&mut self, value: Value) -> Result<Outbox> {
        if self.phase != ProposerPhase::Idle {
            return Err(Error::Phase {
                op: "propose",
                phase: format!("{:?}", self.phase),
            });
        }
        let round = self.ballot.round.max(self.max_round_seen) + 1;
        self.ballot = Ballot::new(round, self.owner);
        self.proposed_value = Some(value);
        self.promises.clear();
        self.phase = ProposerPhase::Prepared;
        let ballot = self.ballot;
        Ok(self
            .acceptors
            .iter()
            .map(|a| (*a, PaxosMsg::Prepare { ballot }))
            .collect())
    }

    /// Gives up the current round; the next `propose` uses a higher ballot.
    pub fn abort(&mut self) {
        if matches!(self.phase, ProposerPhase::Prepared | ProposerPhase::Accepting) {
            self.phase = ProposerPhase::Idle;
            self.promises.clear();
        }
    }

    /// Re-proposes the current value in a new round.
    pub fn retry(&mut self) -> Result<Outbox> {
        self.abort();
        let value = self
            .proposed_value
            .clone()
            .ok_or_else(|| Error::ProtocolViolation("retry without a proposal".into()))?;
        self.propose(value)
    }

    pub fn on_promise(&mut self, from: Pid, ballot: Ballot, accepted: Option<(Ballot, Value)>) -> Outbox {
        if self.phase != ProposerPhase::Prepared || ballot != self.ballot {
            return Vec::new();
        }
        if let Some((b, _)) = &accepted {
            self.max_round_seen = self.max_round_seen.max(b.round);
        }
        self.promises.insert(from, accepted);
        if self.promises.len() < self.quorum() {
            return Vec::new();
        }
        let adopted = self
            .promises
            .values()
            .flatten()
            .max_by_key(|(b, _)| *b)
            .map(|(_, v)| v.clone());
        let value = adopted
            .or_else(|| self.proposed_value.clone())
            .expect("a prepared proposer has a value");
        self.phase = ProposerPhase::Accepting;
        let ballot = self.ballot;
        self.promises
            .keys()
            .map(|a| (*a, PaxosMsg::Accept { ballot, value: value.clone() }))
            .collect()
    }

    /// Returns `true` if the nack aborted the current round.
    pub fn on_nack(&mut self, ballot: Ballot, promised: Ballot) -> bool {
        self.max_round_seen = self.max_round_seen.max(promised.round);
        if ballot == self.ballot && promised > self.ballot && matches!(self.phase, ProposerPhase::Prepared | ProposerPhase::Accepting) {
            self.abort();
            return true;
        }
        false
    }

    pub fn learned(&mut self) {
        self.phase = ProposerPhase::Done;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AcceptorState {
    pub promised: Option<Ballot>,
    pub accepted: Option<(Ballot, Value)>,
}

impl AcceptorState {
    pub fn on_prepare(&mut self, ballot: Ballot) -> PaxosMsg {
        match self.promised {
            Some(p) if ballot <= p => PaxosMsg::Nack { ballot, promised: p },
            _ => {
                self.promised = Some(ballot);
                PaxosMsg::Promise {
                    ballot,
                    accepted: self.accepted.clone(),
                }
            }
        }
    }

    pub fn on_accept(&mut self, ballot: Ballot, value: Value) -> PaxosMsg {
        match self.promised {
            Some(p) if ballot < p => PaxosMsg::Nack { ballot, promised: p },
            _ => {
                self.promised = Some(ballot);
                self.accepted = Some((ballot, value.clone()));
                PaxosMsg::Accepted { ballot, value }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LearnerState {
    quorum: usize,
    accepted_by: BTreeMap<(Ballot, Value), BTreeSet<Pid>>,
    decided: Option<(Ballot, Value)>,
}

impl LearnerState {
    /// Learner for a group of `n` acceptors.
    pub fn new(n: usize) -> Self {
        Self {
            quorum: quorum_size(n).unwrap_or(1),
            accepted_by: BTreeMap::new(),
            decided: None,
        }
    }

    pub fn decided(&self) -> Option<&Value> {
        self.decided.as_ref().map(|(_, v)| v)
    }

    pub fn decision(&self) -> Option<&(Ballot, Value)> {
        self.decided.as_ref()
    }

    pub fn count(&self, ballot: Ballot, value: &str) -> usize {
        self.accepted_by
            .get(&(ballot, value.to_string()))
            .map_or(0, BTreeSet::len)
    }

    /// Counts an `Accepted` from acceptor `from`. Returns the value the first
    /// time a quorum is reached; a second, different value reaching a quorum
    /// is a safety violation.
    pub fn on_accepted(&mut self, from: Pid, ballot: Ballot, value: Value) -> Result<Option<Value>> {
        let voters = self.accepted_by.entry((ballot, value.clone())).or_default();
        voters.insert(from);
        if voters.len() < self.quorum {
            return Ok(None);
        }
        match &self.decided {
            None => {
                self.decided = Some((ballot, value.clone()));
                Ok(Some(value))
            }
            Some((_, v)) if *v == value => Ok(None),
            Some((_, v)) => Err(Error::InvariantViolation(format!(
                "learner saw {v:?} and {value:?} both reach a quorum"
            ))),
        }
    }

    /// Adopts a decision reported by a peer that has already learned it.
    pub fn on_decided(&mut self, ballot: Ballot, value: Value) -> Result<Option<Value>> {
        match &self.decided {
            None => {
                self.decided = Some((ballot, value.clone()));
                Ok(Some(value))
            }
            Some((_, v)) if *v == value => Ok(None),
            Some((_, v)) => Err(Error::InvariantViolation(format!(
                "learner decided {v:?} but a peer reports {value:?}"
            ))),
        }
    }

    pub fn restore(&mut self, record: &SnapshotRecord) {
        self.decided = Some((Ballot::new(record.round_number, 0), record.value.clone()));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub round_number: u64,
    pub value: Value,
}

impl fmt::Display for SnapshotRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "round={} value={}", self.round_number, self.value)
    }
}

/// Append-only in-memory store of decided values.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnapshotStore {
    records: Vec<SnapshotRecord>,
}

impl SnapshotStore {
    pub fn snapshot(&mut self, record: SnapshotRecord) -> &SnapshotRecord {
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    /// The most recent record.
    pub fn revert(&self) -> Result<&SnapshotRecord> {
        self.records.last().ok_or(Error::NoSnapshot)
    }

    pub fn records(&self) -> &[SnapshotRecord] {
        &self.records
    }
}

/// Snapshot of a decided learner.
pub fn px_snapshot(store: &mut SnapshotStore, learner: &LearnerState) -> Result<SnapshotRecord> {
    let (ballot, value) = learner
        .decision()
        .ok_or_else(|| Error::Phase { op: "snapshot", phase: "undecided".into() })?;
    Ok(store
        .snapshot(SnapshotRecord {
            round_number: ballot.round,
            value: value.clone(),
        })
        .clone())
}

/// Restores `learner` from the most recent snapshot.
pub fn px_revert(store: &SnapshotStore, learner: &mut LearnerState) -> Result<SnapshotRecord> {
    let rec = store.revert()?.clone();
    learner.restore(&rec);
    Ok(rec)
}

/// The roles hosted on one process, without any timers. This is the unit the
/// exhaustive explorer works on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PaxosCore {
    pub me: Pid,
    pub n: usize,
    pub proposer: Option<ProposerState>,
    pub acceptor: AcceptorState,
    pub learner: LearnerState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoreStep {
    pub out: Outbox,
    pub decided: Option<Value>,
    pub aborted: bool,
    pub fault: Option<String>,
}

impl PaxosCore {
    pub fn new(me: Pid, n: usize, proposer: bool) -> Self {
        Self {
            me,
            n,
            proposer: proposer.then(|| ProposerState::new(me, 0..n)),
            acceptor: AcceptorState::default(),
            learner: LearnerState::new(n),
        }
    }

    pub fn propose(&mut self, value: Value) -> Result<Outbox> {
        match &mut self.proposer {
            Some(p) => p.propose(value),
            None => Err(Error::ProtocolViolation(format!("process {} is not a proposer", self.me))),
        }
    }

    pub fn handle(&mut self, from: Pid, msg: PaxosMsg) -> CoreStep {
        let mut step = CoreStep::default();
        match msg {
            PaxosMsg::Prepare { ballot } => {
                step.out.push((from, self.acceptor.on_prepare(ballot)));
            }
            PaxosMsg::Accept { ballot, value } => match self.acceptor.on_accept(ballot, value) {
                accepted @ PaxosMsg::Accepted { .. } => {
                    step.out.extend((0..self.n).map(|l| (l, accepted.clone())));
                }
                nack => step.out.push((from, nack)),
            },
            PaxosMsg::Promise { ballot, accepted } => {
                if let Some(p) = &mut self.proposer {
                    step.out = p.on_promise(from, ballot, accepted);
                }
            }
            PaxosMsg::Nack { ballot, promised } => {
                if let Some(p) = &mut self.proposer {
                    step.aborted = p.on_nack(ballot, promised);
                }
            }
            PaxosMsg::Accepted { ballot, value } => {
                let res = self.learner.on_accepted(from, ballot, value);
                self.learn(res, &mut step);
            }
            PaxosMsg::Query => {
                if let Some((ballot, value)) = self.learner.decision() {
                    step.out.push((from, PaxosMsg::Decided { ballot: *ballot, value: value.clone() }));
                }
            }
            PaxosMsg::Decided { ballot, value } => {
                let res = self.learner.on_decided(ballot, value);
                self.learn(res, &mut step);
            }
        }
        step
    }

    fn learn(&mut self, res: Result<Option<Value>>, step: &mut CoreStep) {
        match res {
            Ok(Some(v)) => {
                if let Some(p) = &mut self.proposer {
                    p.learned();
                }
                step.decided = Some(v);
            }
            Ok(None) => {}
            Err(e) => step.fault = Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaxosConfig {
    /// Proposer pid and the value its client asks it to propose.
    pub proposers: BTreeMap<Pid, Value>,
    /// A round that has not decided after this long is retried.
    pub retry_timeout: Tick,
    /// Upper bound of the random backoff before a retry.
    pub max_backoff: Tick,
    /// Decided values are written to the snapshot store.
    pub snapshot: bool,
}

impl Default for PaxosConfig {
    fn default() -> Self {
        Self {
            proposers: BTreeMap::from([(0, "A".to_string())]),
            retry_timeout: 40,
            max_backoff: 20,
            snapshot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaxosTimer {
    /// Fires `retry_timeout` after round `ballot` started.
    Retry(Ballot),
    Backoff,
    /// An undecided learner polls its peers.
    CatchUp,
}

#[derive(Debug, Clone)]
pub struct PaxosNode {
    pub core: PaxosCore,
    pub snapshots: SnapshotStore,
    value: Option<Value>,
    retry_timeout: Tick,
    max_backoff: Tick,
    snapshot: bool,
}

impl PaxosNode {
    pub fn new(me: Pid, n: usize, config: &PaxosConfig) -> Self {
        let value = config.proposers.get(&me).cloned();
        Self {
            core: PaxosCore::new(me, n, value.is_some()),
            snapshots: SnapshotStore::default(),
            value,
            retry_timeout: config.retry_timeout,
            max_backoff: config.max_backoff.max(1),
            snapshot: config.snapshot,
        }
    }

    pub fn cluster(n: usize, config: &PaxosConfig) -> Vec<Self> {
        (0..n).map(|p| Self::new(p, n, config)).collect()
    }

    pub fn decided(&self) -> Option<&Value> {
        self.core.learner.decided()
    }

    fn send_round(&mut self, ctx: &mut Ctx<'_, PaxosMsg, PaxosTimer>, out: Outbox) {
        if let Some(p) = &self.core.proposer {
            ctx.note(format!("propose {} ballot {}", p.proposed_value().map_or("", |v| v), p.ballot()));
            ctx.set_timer(self.retry_timeout, PaxosTimer::Retry(p.ballot()));
        }
        for (dst, m) in out {
            ctx.send(dst, m);
        }
    }

    fn backoff(&mut self, ctx: &mut Ctx<'_, PaxosMsg, PaxosTimer>) {
        let wait = ctx.rng().random_range(1..=self.max_backoff);
        ctx.set_timer(wait, PaxosTimer::Backoff);
    }
}

impl Process for PaxosNode {
    type Msg = PaxosMsg;
    type Timer = PaxosTimer;

    fn on_start(&mut self, ctx: &mut Ctx<'_, PaxosMsg, PaxosTimer>) {
        ctx.set_timer(self.retry_timeout, PaxosTimer::CatchUp);
        if let Some(v) = self.value.clone() {
            match self.core.propose(v) {
                Ok(out) => self.send_round(ctx, out),
                Err(e) => ctx.fault(e.to_string()),
            }
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, PaxosMsg, PaxosTimer>, from: Pid, msg: PaxosMsg) {
        let step = self.core.handle(from, msg);
        for (dst, m) in step.out {
            ctx.send(dst, m);
        }
        if let Some(v) = step.decided {
            let (ballot, _) = self.core.learner.decision().cloned().expect("just decided");
            ctx.decide(format!("value={v} ballot={ballot}"));
            if self.snapshot {
                if let Ok(rec) = px_snapshot(&mut self.snapshots, &self.core.learner) {
                    ctx.note(format!("snapshot {rec}"));
                }
            }
        }
        if step.aborted {
            self.backoff(ctx);
        }
        if let Some(f) = step.fault {
            ctx.fault(f);
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, PaxosMsg, PaxosTimer>, timer: PaxosTimer) {
        if timer == PaxosTimer::CatchUp {
            if self.decided().is_none() {
                let me = ctx.me();
                ctx.send_all((0..self.core.n).filter(|p| *p != me), PaxosMsg::Query);
                ctx.set_timer(self.retry_timeout, PaxosTimer::CatchUp);
            }
            return;
        }
        let Some(p) = &mut self.core.proposer else {
            return;
        };
        match timer {
            PaxosTimer::CatchUp => {}
            PaxosTimer::Retry(b) => {
                if b == p.ballot() && matches!(p.phase(), ProposerPhase::Prepared | ProposerPhase::Accepting) {
                    p.abort();
                    self.backoff(ctx);
                }
            }
            PaxosTimer::Backoff => {
                if p.phase() == ProposerPhase::Idle {
                    match p.retry() {
                        Ok(out) => self.send_round(ctx, out),
                        Err(e) => ctx.fault(e.to_string()),
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(round: u64, pid: Pid) -> Ballot {
        Ballot::new(round, pid)
    }

    #[test]
    fn propose_broadcasts_prepare() {
        let mut p = ProposerState::new(0, 0..3);
        let out = p.propose("A".into()).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|(_, m)| *m == PaxosMsg::Prepare { ballot: b(1, 0) }));
        assert_eq!(p.phase(), ProposerPhase::Prepared);
    }

    #[test]
    fn second_propose_in_flight_is_rejected() {
        let mut p = ProposerState::new(0, 0..3);
        p.propose("A".into()).unwrap();
        assert!(matches!(p.propose("B".into()), Err(Error::Phase { .. })));
    }

    #[test]
    fn propose_after_abort_uses_next_ballot() {
        let mut p = ProposerState::new(0, 0..3);
        p.propose("A".into()).unwrap();
        p.abort();
        p.propose("A".into()).unwrap();
        assert_eq!(p.ballot(), b(2, 0));
    }

    #[test]
    fn prepare_replies() {
        let mut a = AcceptorState::default();
        assert_eq!(a.on_prepare(b(5, 1)), PaxosMsg::Promise { ballot: b(5, 1), accepted: None });

        let mut a = AcceptorState { promised: Some(b(7, 2)), accepted: None };
        assert_eq!(a.on_prepare(b(5, 1)), PaxosMsg::Nack { ballot: b(5, 1), promised: b(7, 2) });
        assert_eq!(a.promised, Some(b(7, 2)));

        let mut a = AcceptorState {
            promised: Some(b(5, 1)),
            accepted: Some((b(3, 0), "x".into())),
        };
        assert_eq!(
            a.on_prepare(b(9, 2)),
            PaxosMsg::Promise { ballot: b(9, 2), accepted: Some((b(3, 0), "x".into())) }
        );
        assert_eq!(a.promised, Some(b(9, 2)));
    }

    #[test]
    fn accept_replies() {
        let mut a = AcceptorState { promised: Some(b(5, 1)), accepted: None };
        assert_eq!(a.on_accept(b(5, 1), "A".into()), PaxosMsg::Accepted { ballot: b(5, 1), value: "A".into() });

        let mut a = AcceptorState { promised: Some(b(7, 2)), accepted: None };
        assert_eq!(a.on_accept(b(5, 1), "A".into()), PaxosMsg::Nack { ballot: b(5, 1), promised: b(7, 2) });
        assert_eq!(a.accepted, None);

        let mut a = AcceptorState { promised: Some(b(5, 1)), accepted: Some((b(5, 1), "x".into())) };
        a.on_accept(b(9, 2), "y".into());
        assert_eq!(a.accepted, Some((b(9, 2), "y".into())));
    }

    #[test]
    fn quorum_of_empty_promises_sends_own_value_to_the_quorum() {
        let mut p = ProposerState::new(0, 0..3);
        p.propose("A".into()).unwrap();
        assert!(p.on_promise(1, b(1, 0), None).is_empty());
        let out = p.on_promise(2, b(1, 0), None);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|(_, m)| *m == PaxosMsg::Accept { ballot: b(1, 0), value: "A".into() }));
        assert_eq!(p.phase(), ProposerPhase::Accepting);
    }

    #[test]
    fn highest_accepted_value_is_adopted_in_any_order() {
        let promises = [(1, Some((b(3, 0), "x".to_string()))), (2, Some((b(4, 1), "y".to_string())))];
        for order in [[0, 1], [1, 0]] {
            let mut p = ProposerState::new(2, 0..3);
            p.propose("A".into()).unwrap();
            let mut out = Vec::new();
            for i in order {
                let (from, acc) = promises[i].clone();
                out = p.on_promise(from, b(1, 2), acc);
            }
            assert!(out.iter().all(|(_, m)| *m == PaxosMsg::Accept { ballot: b(1, 2), value: "y".into() }));
            assert_eq!(out.len(), 2);
        }
    }

    #[test]
    fn stale_and_duplicate_promises_do_not_count() {
        let mut p = ProposerState::new(0, 0..3);
        p.propose("A".into()).unwrap();
        assert!(p.on_promise(1, b(0, 0), None).is_empty());
        assert!(p.on_promise(1, b(1, 0), None).is_empty());
        assert!(p.on_promise(1, b(1, 0), None).is_empty());
        assert_eq!(p.phase(), ProposerPhase::Prepared);
    }

    #[test]
    fn nack_aborts_and_raises_next_round() {
        let mut p = ProposerState::new(0, 0..3);
        p.propose("A".into()).unwrap();
        assert!(p.on_nack(b(1, 0), b(7, 2)));
        assert_eq!(p.phase(), ProposerPhase::Idle);
        p.retry().unwrap();
        assert_eq!(p.ballot(), b(8, 0));
    }

    #[test]
    fn learner_decides_on_quorum_once() {
        let mut l = LearnerState::new(3);
        assert_eq!(l.on_accepted(0, b(5, 1), "A".into()).unwrap(), None);
        // duplicate from the same acceptor
        assert_eq!(l.on_accepted(0, b(5, 1), "A".into()).unwrap(), None);
        assert_eq!(l.on_accepted(1, b(5, 1), "A".into()).unwrap(), Some("A".into()));
        assert_eq!(l.on_accepted(2, b(5, 1), "A".into()).unwrap(), None);
        assert_eq!(l.decided(), Some(&"A".to_string()));
    }

    #[test]
    fn learner_flags_conflicting_quorums() {
        let mut l = LearnerState::new(3);
        l.on_accepted(0, b(5, 1), "A".into()).unwrap();
        l.on_accepted(1, b(5, 1), "A".into()).unwrap();
        l.on_accepted(1, b(6, 2), "B".into()).unwrap();
        assert!(matches!(l.on_accepted(2, b(6, 2), "B".into()), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn snapshot_and_revert() {
        let mut store = SnapshotStore::default();
        assert_eq!(store.revert(), Err(Error::NoSnapshot));
        let mut l = LearnerState::new(1);
        assert!(px_snapshot(&mut store, &l).is_err());
        l.on_accepted(0, b(5, 0), "A".into()).unwrap();
        let rec = px_snapshot(&mut store, &l).unwrap();
        assert_eq!(rec, SnapshotRecord { round_number: 5, value: "A".into() });
        let mut fresh = LearnerState::new(1);
        let back = px_revert(&store, &mut fresh).unwrap();
        assert_eq!(back, rec);
        assert_eq!(fresh.decided(), Some(&"A".to_string()));
    }

    #[test]
    fn query_answered_with_decision() {
        let mut decided = PaxosCore::new(1, 3, false);
        assert!(decided.handle(2, PaxosMsg::Query).out.is_empty());
        decided.learner.on_decided(b(2, 0), "A".into()).unwrap();
        let step = decided.handle(2, PaxosMsg::Query);
        assert_eq!(step.out, vec![(2, PaxosMsg::Decided { ballot: b(2, 0), value: "A".into() })]);

        let mut late = PaxosCore::new(2, 3, false);
        let (_, msg) = step.out[0].clone();
        assert_eq!(late.handle(1, msg.clone()).decided.as_deref(), Some("A"));
        assert!(late.handle(1, msg).decided.is_none());
        let clash = late.handle(0, PaxosMsg::Decided { ballot: b(3, 1), value: "B".into() });
        assert!(clash.fault.is_some());
    }
}
