//! Ballot-based leader election driven by the failure detector.
//!
//! A process that believes the leader is dead waits a candidacy period; if it
//! has not seen an election message by then it broadcasts a fresh [`Ballot`].
//! Every member answers each ballot with a promise carrying the highest ballot
//! it has seen, after a short collection window so racing ballots can meet.
//! Once a candidate counts a quorum of promises it adopts the pid of the
//! highest ballot seen and broadcasts `SetLeader`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdetect::{drive_heartbeat, drive_interval, DetectorConfig, DetectorState};
use crate::simnet::{Ctx, Pid, Process, Tick};

/// Totally ordered proposal identifier, compared as `(round, pid)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ballot {
    pub round: u64,
    pub pid: Pid,
}

impl Ballot {
    pub fn new(round: u64, pid: Pid) -> Self {
        Self { round, pid }
    }

    /// The smallest ballot owned by `pid` that beats `seen`.
    pub fn above(seen: Option<Ballot>, pid: Pid) -> Self {
        Self {
            round: seen.map_or(1, |b| b.round + 1),
            pid,
        }
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},p{})", self.round, self.pid)
    }
}

/// Strict majority of `n`.
pub fn quorum_size(n: usize) -> Result<usize> {
    if n < 1 {
        return Err(Error::Config("quorum of an empty group".into()));
    }
    Ok(n / 2 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElectionPhase {
    Idle,
    Candidate,
    Settled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ElectionMsg {
    Ballot(Ballot),
    /// Reply to `candidate`, carrying the highest ballot the sender has seen.
    Promise { candidate: Ballot, max_seen: Ballot },
    SetLeader { leader: Pid, ballot: Ballot },
}

pub type Outbox = Vec<(Pid, ElectionMsg)>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElectionState {
    owner: Pid,
    members: Vec<Pid>,
    leader: Option<Pid>,
    max_ballot_seen: Option<Ballot>,
    promise_count: usize,
    promisers: BTreeSet<Pid>,
    phase: ElectionPhase,
    round: u64,
    own_ballot: Option<Ballot>,
    settled_ballot: Option<Ballot>,
}

impl ElectionState {
    pub fn new(owner: Pid, members: impl IntoIterator<Item = Pid>) -> Self {
        Self {
            owner,
            members: members.into_iter().collect(),
            leader: None,
            max_ballot_seen: None,
            promise_count: 0,
            promisers: BTreeSet::new(),
            phase: ElectionPhase::Idle,
            round: 0,
            own_ballot: None,
            settled_ballot: None,
        }
    }

    pub fn owner(&self) -> Pid {
        self.owner
    }

    pub fn members(&self) -> &[Pid] {
        &self.members
    }

    pub fn leader(&self) -> Option<Pid> {
        self.leader
    }

    pub fn phase(&self) -> ElectionPhase {
        self.phase
    }

    pub fn max_ballot_seen(&self) -> Option<Ballot> {
        self.max_ballot_seen
    }

    pub fn promise_count(&self) -> usize {
        self.promise_count
    }

    pub fn own_ballot(&self) -> Option<Ballot> {
        self.own_ballot
    }

    pub fn settled_ballot(&self) -> Option<Ballot> {
        self.settled_ballot
    }

    fn quorum(&self) -> usize {
        quorum_size(self.members.len()).unwrap_or(1)
    }

    fn highest_known(&self) -> Option<Ballot> {
        self.max_ballot_seen.max(self.settled_ballot).max(self.own_ballot)
    }

    fn to_members(&self, msg: ElectionMsg) -> Outbox {
        self.members.iter().map(|p| (*p, msg.clone())).collect()
    }

    /// Become a candidate unless the leader is known to be alive.
    pub fn start(&mut self, leader_alive: bool) -> Outbox {
        if leader_alive {
            return Vec::new();
        }
        self.round = self.round.max(self.highest_known().map_or(0, |b| b.round)) + 1;
        let ballot = Ballot::new(self.round, self.owner);
        self.own_ballot = Some(ballot);
        self.phase = ElectionPhase::Candidate;
        self.promise_count = 0;
        self.promisers.clear();
        self.to_members(ElectionMsg::Ballot(ballot))
    }

    /// Records a ballot seen on the wire without counting it as a promise.
    /// Returns `false` for ballots below the settled one.
    pub fn observe(&mut self, ballot: Ballot) -> bool {
        if self.settled_ballot.is_some_and(|s| ballot < s) {
            return false;
        }
        self.max_ballot_seen = self.max_ballot_seen.max(Some(ballot));
        true
    }

    /// Counts one ballot-carrying response. On reaching a quorum, adopts the
    /// pid of the highest ballot seen and announces it.
    pub fn on_ballot(&mut self, ballot: Ballot) -> Outbox {
        self.max_ballot_seen = self.max_ballot_seen.max(Some(ballot));
        self.promise_count += 1;
        self.check_quorum()
    }

    /// As [`ElectionState::on_ballot`], counting each responder once.
    pub fn on_promise(&mut self, from: Pid, candidate: Ballot, max_seen: Ballot) -> Outbox {
        if self.phase != ElectionPhase::Candidate || self.own_ballot != Some(candidate) {
            return Vec::new();
        }
        self.max_ballot_seen = self.max_ballot_seen.max(Some(max_seen));
        if self.promisers.insert(from) {
            self.promise_count += 1;
        }
        self.check_quorum()
    }

    fn check_quorum(&mut self) -> Outbox {
        let Some(max) = self.max_ballot_seen else {
            return Vec::new();
        };
        if self.promise_count == self.quorum() && self.leader != Some(max.pid) {
            self.leader = Some(max.pid);
            return self.to_members(ElectionMsg::SetLeader {
                leader: max.pid,
                ballot: max,
            });
        }
        Vec::new()
    }

    /// Adopts an announced leader and clears the per-election counters.
    /// Announcements below the settled ballot are stale and ignored.
    pub fn on_set_leader(&mut self, leader: Pid, ballot: Ballot) -> bool {
        if self.settled_ballot.is_some_and(|s| ballot < s) {
            return false;
        }
        let changed = self.phase != ElectionPhase::Settled || self.leader != Some(leader) || self.settled_ballot != Some(ballot);
        self.leader = Some(leader);
        self.settled_ballot = Some(ballot);
        self.round = self.round.max(ballot.round);
        self.phase = ElectionPhase::Settled;
        self.promise_count = 0;
        self.promisers.clear();
        self.max_ballot_seen = None;
        self.own_ballot = None;
        changed
    }

    /// Forget the current leader (it was suspected).
    pub fn leader_lost(&mut self) {
        if self.phase == ElectionPhase::Settled {
            self.phase = ElectionPhase::Idle;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectionConfig {
    /// Quiet period before a process becomes a candidate.
    pub candidacy_wait: Tick,
    /// Uniform extra wait in `[0, candidacy_jitter)` drawn from the simulator.
    pub candidacy_jitter: Tick,
    /// How long a member holds its promise so racing ballots can arrive.
    pub reply_window: Tick,
    /// A candidate that has not settled after this long runs again.
    pub retry_timeout: Tick,
    /// When set, only these processes start an election at time zero.
    pub initial_candidates: Option<Vec<Pid>>,
}

impl Default for ElectionConfig {
    fn default() -> Self {
        Self::for_channel(&DetectorConfig::default(), 3)
    }
}

impl ElectionConfig {
    pub fn for_channel(fd: &DetectorConfig, max_delay: Tick) -> Self {
        Self {
            candidacy_wait: 4 * fd.heartbeat_interval,
            candidacy_jitter: 2 * fd.heartbeat_interval,
            reply_window: max_delay,
            retry_timeout: max_delay * 6 + 10,
            initial_candidates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ElectionTimer {
    Candidacy(u64),
    ReplyWindow(u64),
    Retry(Ballot),
}

/// Election participant with its timers, embeddable in larger processes.
#[derive(Debug, Clone)]
pub struct Elector {
    pub state: ElectionState,
    config: ElectionConfig,
    candidacy_gen: u64,
    observed_since_armed: bool,
    window_epoch: u64,
    window: WindowState,
    pending: Vec<Ballot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WindowState {
    Closed,
    Open,
    Elapsed,
}

fn flush<M: Clone + From<ElectionMsg>, T>(ctx: &mut Ctx<'_, M, T>, out: Outbox) {
    for (dst, msg) in out {
        ctx.send(dst, M::from(msg));
    }
}

impl Elector {
    pub fn new(owner: Pid, members: impl IntoIterator<Item = Pid>, config: ElectionConfig) -> Self {
        Self {
            state: ElectionState::new(owner, members),
            config,
            candidacy_gen: 0,
            observed_since_armed: false,
            window_epoch: 0,
            window: WindowState::Closed,
            pending: Vec::new(),
        }
    }

    pub fn config(&self) -> &ElectionConfig {
        &self.config
    }

    pub fn leader(&self) -> Option<Pid> {
        self.state.leader()
    }

    /// Schedules a candidacy check after the configured wait plus jitter.
    pub fn arm<M: Clone, T: From<ElectionTimer>>(&mut self, ctx: &mut Ctx<'_, M, T>, extra: Tick) {
        use rand::Rng;
        self.candidacy_gen += 1;
        self.observed_since_armed = false;
        let jitter = if self.config.candidacy_jitter > 0 {
            ctx.rng().random_range(0..self.config.candidacy_jitter)
        } else {
            0
        };
        ctx.set_timer(
            self.config.candidacy_wait + jitter + extra,
            T::from(ElectionTimer::Candidacy(self.candidacy_gen)),
        );
    }

    /// Initial timers: designated candidates (or everyone) arm a candidacy.
    pub fn on_start<M: Clone, T: From<ElectionTimer>>(&mut self, ctx: &mut Ctx<'_, M, T>) {
        match &self.config.initial_candidates {
            Some(c) if c.contains(&self.state.owner()) => {
                self.candidacy_gen += 1;
                ctx.set_timer(
                    self.config.candidacy_wait,
                    T::from(ElectionTimer::Candidacy(self.candidacy_gen)),
                );
            }
            Some(_) => {
                let fallback = 3 * self.config.candidacy_wait;
                self.arm(ctx, fallback);
            }
            None => self.arm(ctx, 0),
        }
    }

    fn begin<M: Clone + From<ElectionMsg>, T: From<ElectionTimer>>(&mut self, ctx: &mut Ctx<'_, M, T>) {
        let out = self.state.start(false);
        if let Some(b) = self.state.own_ballot() {
            ctx.note(format!("candidate {b}"));
            ctx.set_timer(self.config.retry_timeout, T::from(ElectionTimer::Retry(b)));
        }
        flush(ctx, out);
    }

    pub fn on_timer<M: Clone + From<ElectionMsg>, T: From<ElectionTimer>>(
        &mut self,
        ctx: &mut Ctx<'_, M, T>,
        timer: ElectionTimer,
        leader_alive: bool,
    ) {
        match timer {
            ElectionTimer::Candidacy(gen) => {
                if gen == self.candidacy_gen && !leader_alive && !self.observed_since_armed {
                    self.begin(ctx);
                }
            }
            ElectionTimer::ReplyWindow(epoch) => {
                if epoch == self.window_epoch && self.window == WindowState::Open {
                    self.window = WindowState::Elapsed;
                    let max_seen = self.state.max_ballot_seen();
                    for candidate in std::mem::take(&mut self.pending) {
                        let max_seen = max_seen.unwrap_or(candidate).max(candidate);
                        ctx.send(candidate.pid, M::from(ElectionMsg::Promise { candidate, max_seen }));
                    }
                }
            }
            ElectionTimer::Retry(b) => {
                if self.state.phase() == ElectionPhase::Candidate && self.state.own_ballot() == Some(b) && !leader_alive {
                    self.begin(ctx);
                }
            }
        }
    }

    /// Handles an election message; returns the newly adopted leader, if any.
    pub fn on_message<M: Clone + From<ElectionMsg>, T: From<ElectionTimer>>(
        &mut self,
        ctx: &mut Ctx<'_, M, T>,
        from: Pid,
        msg: ElectionMsg,
    ) -> Option<Pid> {
        match msg {
            ElectionMsg::Ballot(b) => {
                self.observed_since_armed = true;
                if !self.state.observe(b) {
                    // A stale candidate: tell it who won.
                    if let (Some(leader), Some(ballot)) = (self.state.leader(), self.state.settled_ballot()) {
                        ctx.send(from, M::from(ElectionMsg::SetLeader { leader, ballot }));
                    }
                    return None;
                }
                match self.window {
                    WindowState::Closed => {
                        self.window = WindowState::Open;
                        self.window_epoch += 1;
                        self.pending.push(b);
                        ctx.set_timer(self.config.reply_window, T::from(ElectionTimer::ReplyWindow(self.window_epoch)));
                    }
                    WindowState::Open => self.pending.push(b),
                    WindowState::Elapsed => {
                        let max_seen = self.state.max_ballot_seen().unwrap_or(b);
                        ctx.send(b.pid, M::from(ElectionMsg::Promise { candidate: b, max_seen }));
                    }
                }
                None
            }
            ElectionMsg::Promise { candidate, max_seen } => {
                let out = self.state.on_promise(from, candidate, max_seen);
                flush(ctx, out);
                None
            }
            ElectionMsg::SetLeader { leader, ballot } => {
                if self.state.on_set_leader(leader, ballot) {
                    self.window = WindowState::Closed;
                    self.pending.clear();
                    self.candidacy_gen += 1;
                    ctx.note(format!("leader {leader} ballot {ballot}"));
                    Some(leader)
                } else {
                    None
                }
            }
        }
    }

    pub fn settled(&self) -> Option<(Pid, Ballot)> {
        match (self.state.phase(), self.state.leader(), self.state.settled_ballot()) {
            (ElectionPhase::Settled, Some(l), Some(b)) => Some((l, b)),
            _ => None,
        }
    }

    /// Adopts a leader learned from a peer if it is newer than ours.
    pub fn catch_up<M: Clone + From<ElectionMsg>, T: From<ElectionTimer>>(
        &mut self,
        ctx: &mut Ctx<'_, M, T>,
        settled: Option<(Pid, Ballot)>,
    ) -> Option<Pid> {
        let (leader, ballot) = settled?;
        if self.state.settled_ballot().is_some_and(|s| s >= ballot) {
            return None;
        }
        self.on_message(ctx, leader, ElectionMsg::SetLeader { leader, ballot })
    }

    /// The current leader was suspected: forget it and arm a candidacy.
    pub fn leader_suspected<M: Clone, T: From<ElectionTimer>>(&mut self, ctx: &mut Ctx<'_, M, T>) {
        self.state.leader_lost();
        self.window = WindowState::Closed;
        self.arm(ctx, 0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeMsg {
    /// Carries the sender's settled leader so a process that missed the
    /// announcement catches up.
    Heartbeat(Option<(Pid, Ballot)>),
    Election(ElectionMsg),
}

impl From<ElectionMsg> for NodeMsg {
    fn from(m: ElectionMsg) -> Self {
        NodeMsg::Election(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeTimer {
    Heartbeat,
    Election(ElectionTimer),
}

impl From<ElectionTimer> for NodeTimer {
    fn from(t: ElectionTimer) -> Self {
        NodeTimer::Election(t)
    }
}

/// A process running the failure detector and the election.
#[derive(Debug, Clone)]
pub struct ElectionNode {
    pub detector: DetectorState,
    pub elector: Elector,
}

impl ElectionNode {
    pub fn new(owner: Pid, n: usize, fd: &DetectorConfig, election: ElectionConfig) -> Self {
        Self {
            detector: DetectorState::new(owner, 0..n, fd),
            elector: Elector::new(owner, 0..n, election),
        }
    }

    pub fn leader(&self) -> Option<Pid> {
        self.elector.leader()
    }

    pub fn leader_alive(&self) -> bool {
        leader_alive(&self.detector, &self.elector)
    }
}

/// The elected leader exists and is not suspected by `detector`.
pub fn leader_alive(detector: &DetectorState, elector: &Elector) -> bool {
    elector.state.phase() == ElectionPhase::Settled
        && elector
            .leader()
            .is_some_and(|l| l == detector.owner() || !detector.is_suspected(l))
}

impl Process for ElectionNode {
    type Msg = NodeMsg;
    type Timer = NodeTimer;

    fn on_start(&mut self, ctx: &mut Ctx<'_, NodeMsg, NodeTimer>) {
        ctx.set_timer(self.detector.heartbeat_interval(), NodeTimer::Heartbeat);
        self.elector.on_start(ctx);
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, NodeMsg, NodeTimer>, from: Pid, msg: NodeMsg) {
        if from != ctx.me() {
            drive_heartbeat(&mut self.detector, ctx, from);
        }
        match msg {
            NodeMsg::Heartbeat(settled) => {
                self.elector.catch_up(ctx, settled);
            }
            NodeMsg::Election(m) => {
                self.elector.on_message(ctx, from, m);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, NodeMsg, NodeTimer>, timer: NodeTimer) {
        match timer {
            NodeTimer::Heartbeat => {
                let hb = NodeMsg::Heartbeat(self.elector.settled());
                let suspected = drive_interval(&mut self.detector, ctx, hb);
                ctx.set_timer(self.detector.heartbeat_interval(), NodeTimer::Heartbeat);
                if self.leader().is_some_and(|l| suspected.contains(&l)) {
                    self.elector.leader_suspected(ctx);
                }
            }
            NodeTimer::Election(t) => {
                let alive = self.leader_alive();
                self.elector.on_timer(ctx, t, alive);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quorum_sizes() {
        assert_eq!(quorum_size(5).unwrap(), 3);
        assert_eq!(quorum_size(1).unwrap(), 1);
        assert_eq!(quorum_size(4).unwrap(), 3);
        assert_eq!(quorum_size(3).unwrap(), 2);
        assert!(quorum_size(0).is_err());
    }

    #[test]
    fn ballot_order_is_lexicographic() {
        assert!(Ballot::new(10, 1) < Ballot::new(10, 4));
        assert!(Ballot::new(10, 4) < Ballot::new(11, 0));
        assert_eq!(Ballot::above(Some(Ballot::new(7, 3)), 1), Ballot::new(8, 1));
    }

    #[test]
    fn start_is_gated_on_leader_liveness() {
        let mut s = ElectionState::new(0, 0..5);
        assert!(s.start(true).is_empty());
        assert_eq!(s.phase(), ElectionPhase::Idle);
        let out = s.start(false);
        assert_eq!(out.len(), 5);
        assert_eq!(s.phase(), ElectionPhase::Candidate);
        assert_eq!(s.own_ballot(), Some(Ballot::new(1, 0)));
        // Successive ballots of one process strictly increase.
        s.start(false);
        assert_eq!(s.own_ballot(), Some(Ballot::new(2, 0)));
    }

    #[test]
    fn max_ballot_wins_in_either_arrival_order() {
        let ballots = [Ballot::new(10, 1), Ballot::new(12, 3)];
        for order in [[0, 1], [1, 0]] {
            let mut s = ElectionState::new(0, 0..3);
            let first = s.on_ballot(ballots[order[0]]);
            assert!(first.is_empty(), "quorum of 2 not reached after one ballot");
            assert_eq!(s.leader(), None);
            let out = s.on_ballot(ballots[order[1]]);
            assert_eq!(s.leader(), Some(3));
            assert_eq!(out.len(), 3);
            assert!(out.iter().all(|(_, m)| *m == ElectionMsg::SetLeader { leader: 3, ballot: Ballot::new(12, 3) }));
        }
    }

    #[test]
    fn equal_rounds_break_on_pid() {
        let mut s = ElectionState::new(0, 0..3);
        s.on_ballot(Ballot::new(10, 1));
        s.on_ballot(Ballot::new(10, 4));
        assert_eq!(s.leader(), Some(4));
    }

    #[test]
    fn set_leader_settles_and_resets_counters() {
        let mut s = ElectionState::new(0, 0..3);
        s.start(false);
        s.on_promise(1, Ballot::new(1, 0), Ballot::new(1, 0));
        assert!(s.on_set_leader(3, Ballot::new(2, 3)));
        assert_eq!(s.leader(), Some(3));
        assert_eq!(s.phase(), ElectionPhase::Settled);
        assert_eq!(s.promise_count(), 0);
        assert_eq!(s.max_ballot_seen(), None);
        // Duplicate announcement changes nothing.
        let before = s.clone();
        assert!(!s.on_set_leader(3, Ballot::new(2, 3)));
        assert_eq!(s, before);
        // Stale announcement is ignored.
        assert!(!s.on_set_leader(1, Ballot::new(1, 1)));
        assert_eq!(s.leader(), Some(3));
    }

    #[test]
    fn promises_count_each_responder_once() {
        let mut s = ElectionState::new(0, 0..5);
        s.start(false);
        let b = s.own_ballot().unwrap();
        s.on_promise(1, b, b);
        s.on_promise(1, b, b);
        s.on_promise(1, b, b);
        assert_eq!(s.promise_count(), 1);
        assert_eq!(s.leader(), None);
        s.on_promise(2, b, b);
        let out = s.on_promise(3, b, b);
        assert_eq!(s.leader(), Some(0));
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn next_ballot_exceeds_everything_known() {
        let mut s = ElectionState::new(2, 0..3);
        s.on_set_leader(1, Ballot::new(9, 1));
        s.leader_lost();
        s.start(false);
        assert_eq!(s.own_ballot(), Some(Ballot::new(10, 2)));
    }
}
