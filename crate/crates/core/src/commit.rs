//! Two- and three-phase atomic commit.
//!
//! Process 0 coordinates one transaction; processes `1..n` participate. In
//! 3PC a participant that hears nothing from the coordinator for too long
//! joins an election among the participants, and the winner finishes the
//! transaction from the states the participants report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::election::{ElectionConfig, ElectionMsg, ElectionTimer, Elector};
use crate::error::{Error, Result};
use crate::fdetect::DetectorConfig;
use crate::simnet::{Ctx, Pid, Process, Tick};

pub type TxId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Yes,
    No,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "2pc")]
    TwoPhase,
    #[serde(rename = "3pc")]
    ThreePhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoordPhase {
    Init,
    Voting,
    PreCommitted,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartPhase {
    Working,
    Prepared,
    PreCommitted,
    Committed,
    Aborted,
}

impl PartPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, PartPhase::Committed | PartPhase::Aborted)
    }
}

impl fmt::Display for PartPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    DoCommit,
    DoAbort,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitMsg {
    CanCommit { tx: TxId },
    Vote { tx: TxId, vote: Vote },
    DoPreCommit { tx: TxId },
    Ack { tx: TxId },
    DoCommit { tx: TxId },
    DoAbort { tx: TxId },
    HaveCommitted { tx: TxId },
    StateReq { tx: TxId },
    StateReply { tx: TxId, phase: PartPhase },
    Election(ElectionMsg),
}

impl From<ElectionMsg> for CommitMsg {
    fn from(m: ElectionMsg) -> Self {
        CommitMsg::Election(m)
    }
}

pub type Outbox = Vec<(Pid, CommitMsg)>;

/// Commit iff every participant voted yes.
pub fn tpc_collect(participants: &BTreeSet<Pid>, votes: &BTreeMap<Pid, Vote>) -> Command {
    let all_yes = participants.iter().all(|p| votes.get(p) == Some(&Vote::Yes));
    if all_yes {
        Command::DoCommit
    } else {
        Command::DoAbort
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coordinator {
    pub tx: TxId,
    pub variant: Variant,
    pub participants: BTreeSet<Pid>,
    pub phase: CoordPhase,
    pub votes: BTreeMap<Pid, Vote>,
    pub acks: BTreeSet<Pid>,
}

impl Coordinator {
    pub fn new(tx: TxId, variant: Variant, participants: impl IntoIterator<Item = Pid>) -> Self {
        Self {
            tx,
            variant,
            participants: participants.into_iter().collect(),
            phase: CoordPhase::Init,
            votes: BTreeMap::new(),
            acks: BTreeSet::new(),
        }
    }

    fn to_all(&self, msg: CommitMsg) -> Outbox {
        self.participants.iter().map(|p| (*p, msg.clone())).collect()
    }

    pub fn begin(&mut self) -> Result<Outbox> {
        if self.participants.is_empty() {
            return Err(Error::Config("a transaction needs at least one participant".into()));
        }
        if self.phase != CoordPhase::Init {
            return Err(Error::Phase { op: "begin", phase: format!("{:?}", self.phase) });
        }
        self.phase = CoordPhase::Voting;
        Ok(self.to_all(CommitMsg::CanCommit { tx: self.tx }))
    }

    pub fn all_voted(&self) -> bool {
        self.participants.iter().all(|p| self.votes.contains_key(p))
    }

    pub fn on_vote(&mut self, from: Pid, vote: Vote) {
        if self.phase == CoordPhase::Voting && self.participants.contains(&from) {
            self.votes.entry(from).or_insert(vote);
        }
    }

    /// Closes the vote: absent votes count as missing. Returns the messages of
    /// the next phase.
    pub fn close_vote(&mut self) -> Outbox {
        if self.phase != CoordPhase::Voting {
            return Vec::new();
        }
        for p in &self.participants {
            self.votes.entry(*p).or_insert(Vote::Missing);
        }
        match (tpc_collect(&self.participants, &self.votes), self.variant) {
            (Command::DoAbort, _) => self.finish(Command::DoAbort),
            (Command::DoCommit, Variant::TwoPhase) => self.finish(Command::DoCommit),
            (Command::DoCommit, Variant::ThreePhase) => {
                self.phase = CoordPhase::PreCommitted;
                self.to_all(CommitMsg::DoPreCommit { tx: self.tx })
            }
        }
    }

    pub fn on_ack(&mut self, from: Pid) -> Outbox {
        if self.phase != CoordPhase::PreCommitted {
            return Vec::new();
        }
        self.acks.insert(from);
        if self.acks.is_superset(&self.participants) {
            self.finish(Command::DoCommit)
        } else {
            Vec::new()
        }
    }

    /// A missing ACK aborts.
    pub fn ack_timeout(&mut self) -> Outbox {
        if self.phase != CoordPhase::PreCommitted {
            return Vec::new();
        }
        self.finish(Command::DoAbort)
    }

    fn finish(&mut self, cmd: Command) -> Outbox {
        let tx = self.tx;
        match cmd {
            Command::DoCommit => {
                self.phase = CoordPhase::Committed;
                self.to_all(CommitMsg::DoCommit { tx })
            }
            Command::DoAbort => {
                self.phase = CoordPhase::Aborted;
                self.to_all(CommitMsg::DoAbort { tx })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Participant {
    pub tx: TxId,
    pub variant: Variant,
    pub phase: PartPhase,
}

impl Participant {
    pub fn new(tx: TxId, variant: Variant) -> Self {
        Self { tx, variant, phase: PartPhase::Working }
    }

    /// Casts this participant's vote. Votes after the first are ignored.
    pub fn vote(&mut self, decision: Vote) -> Option<CommitMsg> {
        if self.phase != PartPhase::Working {
            return None;
        }
        let vote = match decision {
            Vote::Yes => {
                self.phase = PartPhase::Prepared;
                Vote::Yes
            }
            _ => {
                self.phase = PartPhase::Aborted;
                Vote::No
            }
        };
        Some(CommitMsg::Vote { tx: self.tx, vote })
    }

    pub fn on_pre_commit(&mut self) -> Result<Option<CommitMsg>> {
        match self.phase {
            PartPhase::Prepared => {
                self.phase = PartPhase::PreCommitted;
                Ok(Some(CommitMsg::Ack { tx: self.tx }))
            }
            PartPhase::PreCommitted => Ok(Some(CommitMsg::Ack { tx: self.tx })),
            p if p.is_terminal() => Ok(None),
            p => Err(Error::ProtocolViolation(format!("doPreCommit while {p}"))),
        }
    }

    pub fn finalize(&mut self, cmd: Command) -> Result<Option<CommitMsg>> {
        match (cmd, self.phase) {
            (Command::DoCommit, PartPhase::Committed) | (Command::DoAbort, PartPhase::Aborted) => Ok(None),
            (Command::DoCommit, PartPhase::Prepared | PartPhase::PreCommitted) => {
                self.phase = PartPhase::Committed;
                Ok(Some(CommitMsg::HaveCommitted { tx: self.tx }))
            }
            (Command::DoAbort, PartPhase::Working | PartPhase::Prepared | PartPhase::PreCommitted) => {
                self.phase = PartPhase::Aborted;
                Ok(None)
            }
            (cmd, phase) => Err(Error::ProtocolViolation(format!("{cmd:?} while {phase}"))),
        }
    }
}

/// Outcome chosen by a 3PC surrogate from the states participants reported.
pub fn termination_rule(states: impl IntoIterator<Item = PartPhase>) -> Command {
    let states: BTreeSet<PartPhase> = states.into_iter().collect();
    if states.contains(&PartPhase::Committed) {
        Command::DoCommit
    } else if states.contains(&PartPhase::Aborted) {
        Command::DoAbort
    } else if states.contains(&PartPhase::PreCommitted) {
        Command::DoCommit
    } else {
        Command::DoAbort
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrashPoint {
    #[default]
    None,
    /// After sending canCommit, before any vote is counted.
    BeforeVotes,
    /// After the vote closes, before anything of the next phase is sent.
    AfterVotes,
    /// After doPreCommit is sent (3PC only).
    AfterPreCommit,
    /// After the final command is sent.
    AfterDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommitConfig {
    pub variant: Variant,
    pub tx_id: TxId,
    /// Vote of participant `i + 1`; participants beyond the list vote yes.
    pub votes: Vec<Vote>,
    pub crash_point: CrashPoint,
    /// Defaults to ten times the channel's maximum delay.
    pub vote_timeout: Option<Tick>,
}

impl Default for CommitConfig {
    fn default() -> Self {
        Self {
            variant: Variant::TwoPhase,
            tx_id: 1,
            votes: Vec::new(),
            crash_point: CrashPoint::None,
            vote_timeout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitTimer {
    VoteTimeout,
    AckTimeout,
    Silence(u64),
    CollectStates,
    Election(ElectionTimer),
}

impl From<ElectionTimer> for CommitTimer {
    fn from(t: ElectionTimer) -> Self {
        CommitTimer::Election(t)
    }
}

type CCtx<'a> = Ctx<'a, CommitMsg, CommitTimer>;

#[derive(Debug, Clone)]
pub struct CoordinatorNode {
    pub state: Coordinator,
    crash_point: CrashPoint,
    timeout: Tick,
}

#[derive(Debug, Clone)]
pub struct ParticipantNode {
    pub state: Participant,
    intent: Vote,
    silence: Tick,
    silence_gen: u64,
    elector: Elector,
    recovering: bool,
    reports: BTreeMap<Pid, PartPhase>,
    participants: BTreeSet<Pid>,
}

#[derive(Debug, Clone)]
pub enum CommitNode {
    Coordinator(CoordinatorNode),
    Participant(ParticipantNode),
}

impl CommitNode {
    pub fn cluster(n: usize, config: &CommitConfig, max_delay: Tick) -> Result<Vec<Self>> {
        if n < 2 {
            return Err(Error::Config("commit needs a coordinator and at least one participant".into()));
        }
        let timeout = config.vote_timeout.unwrap_or(10 * max_delay.max(1));
        let participants: BTreeSet<Pid> = (1..n).collect();
        let mut nodes = vec![CommitNode::Coordinator(CoordinatorNode {
            state: Coordinator::new(config.tx_id, config.variant, participants.clone()),
            crash_point: config.crash_point,
            timeout,
        })];
        let election = ElectionConfig::for_channel(&DetectorConfig::with_timeout(max_delay.max(1), timeout), max_delay.max(1));
        for p in 1..n {
            nodes.push(CommitNode::Participant(ParticipantNode {
                state: Participant::new(config.tx_id, config.variant),
                intent: config.votes.get(p - 1).copied().unwrap_or(Vote::Yes),
                silence: 3 * timeout,
                silence_gen: 0,
                elector: Elector::new(p, participants.clone(), election.clone()),
                recovering: false,
                reports: BTreeMap::new(),
                participants: participants.clone(),
            }));
        }
        Ok(nodes)
    }

    pub fn participant_phase(&self) -> Option<PartPhase> {
        match self {
            CommitNode::Participant(p) => Some(p.state.phase),
            CommitNode::Coordinator(_) => None,
        }
    }

    pub fn coordinator_phase(&self) -> Option<CoordPhase> {
        match self {
            CommitNode::Coordinator(c) => Some(c.state.phase),
            CommitNode::Participant(_) => None,
        }
    }
}

fn flush(ctx: &mut CCtx<'_>, out: Outbox) {
    for (dst, m) in out {
        ctx.send(dst, m);
    }
}

impl CoordinatorNode {
    fn decided(&self, ctx: &mut CCtx<'_>) {
        match self.state.phase {
            CoordPhase::Committed | CoordPhase::Aborted => {
                ctx.decide(format!("tx={} {:?}", self.state.tx, self.state.phase));
                if self.crash_point == CrashPoint::AfterDecision {
                    ctx.halt();
                }
            }
            CoordPhase::PreCommitted => {
                if self.crash_point == CrashPoint::AfterPreCommit {
                    ctx.halt();
                } else {
                    ctx.set_timer(self.timeout, CommitTimer::AckTimeout);
                }
            }
            _ => {}
        }
    }

    fn close(&mut self, ctx: &mut CCtx<'_>) {
        if self.state.phase != CoordPhase::Voting {
            return;
        }
        if self.crash_point == CrashPoint::AfterVotes {
            for p in &self.state.participants {
                self.state.votes.entry(*p).or_insert(Vote::Missing);
            }
            ctx.note(format!("votes {:?}", self.state.votes));
            ctx.halt();
            return;
        }
        let out = self.state.close_vote();
        ctx.note(format!("votes {:?}", self.state.votes));
        flush(ctx, out);
        self.decided(ctx);
    }
}

impl ParticipantNode {
    fn rearm(&mut self, ctx: &mut CCtx<'_>) {
        if self.state.variant == Variant::ThreePhase && !self.state.phase.is_terminal() {
            self.silence_gen += 1;
            ctx.set_timer(self.silence, CommitTimer::Silence(self.silence_gen));
        }
    }

    fn finalize(&mut self, ctx: &mut CCtx<'_>, cmd: Command) -> Option<CommitMsg> {
        let before = self.state.phase;
        match self.state.finalize(cmd) {
            Ok(reply) => {
                if self.state.phase != before {
                    ctx.decide(format!("tx={} {}", self.state.tx, self.state.phase));
                }
                reply
            }
            Err(e) => {
                ctx.fault(e.to_string());
                None
            }
        }
    }

    fn surrogate_decide(&mut self, ctx: &mut CCtx<'_>) {
        let cmd = termination_rule(self.reports.values().copied().chain([self.state.phase]));
        ctx.note(format!("surrogate {} decides {cmd:?} from {:?}", ctx.me(), self.reports));
        self.recovering = false;
        let tx = self.state.tx;
        let msg = match cmd {
            Command::DoCommit => CommitMsg::DoCommit { tx },
            Command::DoAbort => CommitMsg::DoAbort { tx },
        };
        ctx.send_all(self.participants.iter().copied(), msg);
    }
}

impl Process for CommitNode {
    type Msg = CommitMsg;
    type Timer = CommitTimer;

    fn on_start(&mut self, ctx: &mut CCtx<'_>) {
        match self {
            CommitNode::Coordinator(c) => match c.state.begin() {
                Ok(out) => {
                    flush(ctx, out);
                    if c.crash_point == CrashPoint::BeforeVotes {
                        ctx.halt();
                    } else {
                        ctx.set_timer(c.timeout, CommitTimer::VoteTimeout);
                    }
                }
                Err(e) => ctx.fault(e.to_string()),
            },
            CommitNode::Participant(p) => p.rearm(ctx),
        }
    }

    fn on_message(&mut self, ctx: &mut CCtx<'_>, from: Pid, msg: CommitMsg) {
        match self {
            CommitNode::Coordinator(c) => match msg {
                CommitMsg::Vote { vote, .. } => {
                    c.state.on_vote(from, vote);
                    if c.state.all_voted() {
                        c.close(ctx);
                    }
                }
                CommitMsg::Ack { .. } => {
                    let out = c.state.on_ack(from);
                    flush(ctx, out);
                    c.decided(ctx);
                }
                CommitMsg::HaveCommitted { .. } => ctx.note(format!("participant {from} committed")),
                _ => {}
            },
            CommitNode::Participant(p) => {
                if from == 0 {
                    p.rearm(ctx);
                }
                match msg {
                    CommitMsg::CanCommit { .. } => {
                        if let Some(reply) = p.state.vote(p.intent) {
                            if p.state.phase == PartPhase::Aborted {
                                ctx.decide(format!("tx={} Aborted", p.state.tx));
                            }
                            ctx.send(from, reply);
                        }
                    }
                    CommitMsg::DoPreCommit { .. } => match p.state.on_pre_commit() {
                        Ok(Some(ack)) => ctx.send(from, ack),
                        Ok(None) => {}
                        Err(e) => ctx.fault(e.to_string()),
                    },
                    CommitMsg::DoCommit { .. } => {
                        if let Some(reply) = p.finalize(ctx, Command::DoCommit) {
                            ctx.send(0, reply);
                        }
                    }
                    CommitMsg::DoAbort { .. } => {
                        p.finalize(ctx, Command::DoAbort);
                    }
                    CommitMsg::StateReq { tx } => ctx.send(from, CommitMsg::StateReply { tx, phase: p.state.phase }),
                    CommitMsg::StateReply { phase, .. } => {
                        if p.recovering {
                            p.reports.insert(from, phase);
                            if p.reports.len() == p.participants.len() {
                                p.surrogate_decide(ctx);
                            }
                        }
                    }
                    CommitMsg::Election(m) => {
                        if p.elector.on_message(ctx, from, m) == Some(ctx.me()) {
                            p.recovering = true;
                            p.reports.clear();
                            let tx = p.state.tx;
                            ctx.send_all(p.participants.iter().copied(), CommitMsg::StateReq { tx });
                            ctx.set_timer(p.silence, CommitTimer::CollectStates);
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut CCtx<'_>, timer: CommitTimer) {
        match self {
            CommitNode::Coordinator(c) => match timer {
                CommitTimer::VoteTimeout => c.close(ctx),
                CommitTimer::AckTimeout => {
                    let out = c.state.ack_timeout();
                    if !out.is_empty() {
                        flush(ctx, out);
                        c.decided(ctx);
                    }
                }
                _ => {}
            },
            CommitNode::Participant(p) => match timer {
                CommitTimer::Silence(gen) if gen == p.silence_gen && !p.state.phase.is_terminal() => {
                    if p.state.phase == PartPhase::Working {
                        // never voted, so the coordinator cannot have committed
                        p.finalize(ctx, Command::DoAbort);
                    }
                    ctx.note("coordinator silent");
                    p.elector.arm(ctx, 0);
                }
                CommitTimer::Silence(_) => {}
                CommitTimer::CollectStates => {
                    if p.recovering {
                        p.surrogate_decide(ctx);
                    }
                }
                CommitTimer::Election(t) => {
                    let settled = p.elector.settled().is_some();
                    p.elector.on_timer(ctx, t, settled);
                }
                _ => {}
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord(variant: Variant) -> Coordinator {
        Coordinator::new(1, variant, [1, 2, 3])
    }

    #[test]
    fn begin_sends_can_commit_once() {
        let mut c = coord(Variant::TwoPhase);
        assert_eq!(c.begin().unwrap().len(), 3);
        assert_eq!(c.phase, CoordPhase::Voting);
        assert!(matches!(c.begin(), Err(Error::Phase { .. })));
        assert!(matches!(Coordinator::new(1, Variant::TwoPhase, []).begin(), Err(Error::Config(_))));
    }

    #[test]
    fn collect_rules() {
        let ps = BTreeSet::from([1, 2, 3]);
        let v = |a, b, c| BTreeMap::from([(1, a), (2, b), (3, c)]);
        assert_eq!(tpc_collect(&ps, &v(Vote::Yes, Vote::Yes, Vote::Yes)), Command::DoCommit);
        assert_eq!(tpc_collect(&ps, &v(Vote::Yes, Vote::No, Vote::Yes)), Command::DoAbort);
        assert_eq!(tpc_collect(&ps, &v(Vote::Yes, Vote::Missing, Vote::Yes)), Command::DoAbort);
    }

    #[test]
    fn missing_vote_aborts_on_close() {
        let mut c = coord(Variant::TwoPhase);
        c.begin().unwrap();
        c.on_vote(1, Vote::Yes);
        c.on_vote(3, Vote::Yes);
        let out = c.close_vote();
        assert!(out.iter().all(|(_, m)| *m == CommitMsg::DoAbort { tx: 1 }));
        assert_eq!(c.votes[&2], Vote::Missing);
        assert_eq!(c.phase, CoordPhase::Aborted);
    }

    #[test]
    fn three_phase_waits_for_every_ack() {
        let mut c = coord(Variant::ThreePhase);
        c.begin().unwrap();
        for p in 1..=3 {
            c.on_vote(p, Vote::Yes);
        }
        let out = c.close_vote();
        assert!(out.iter().all(|(_, m)| *m == CommitMsg::DoPreCommit { tx: 1 }));
        assert!(c.on_ack(1).is_empty());
        assert!(c.on_ack(2).is_empty());
        assert_eq!(c.on_ack(3).len(), 3);
        assert_eq!(c.phase, CoordPhase::Committed);

        let mut c = coord(Variant::ThreePhase);
        c.begin().unwrap();
        for p in 1..=3 {
            c.on_vote(p, Vote::Yes);
        }
        c.close_vote();
        c.on_ack(1);
        c.ack_timeout();
        assert_eq!(c.phase, CoordPhase::Aborted);
    }

    #[test]
    fn participant_votes() {
        let mut p = Participant::new(1, Variant::TwoPhase);
        assert_eq!(p.vote(Vote::Yes), Some(CommitMsg::Vote { tx: 1, vote: Vote::Yes }));
        assert_eq!(p.phase, PartPhase::Prepared);
        assert_eq!(p.vote(Vote::Yes), None);
        assert_eq!(p.phase, PartPhase::Prepared);

        let mut p = Participant::new(1, Variant::TwoPhase);
        assert_eq!(p.vote(Vote::No), Some(CommitMsg::Vote { tx: 1, vote: Vote::No }));
        assert_eq!(p.phase, PartPhase::Aborted);
    }

    #[test]
    fn finalize_rules() {
        let mut p = Participant::new(1, Variant::TwoPhase);
        p.vote(Vote::Yes);
        assert_eq!(p.finalize(Command::DoCommit).unwrap(), Some(CommitMsg::HaveCommitted { tx: 1 }));
        assert_eq!(p.phase, PartPhase::Committed);

        let mut p = Participant::new(1, Variant::TwoPhase);
        p.vote(Vote::Yes);
        p.finalize(Command::DoAbort).unwrap();
        assert_eq!(p.phase, PartPhase::Aborted);

        let mut p = Participant::new(1, Variant::TwoPhase);
        assert!(matches!(p.finalize(Command::DoCommit), Err(Error::ProtocolViolation(_))));
        assert_eq!(p.phase, PartPhase::Working);
    }

    #[test]
    fn termination_rule_cases() {
        use PartPhase::*;
        assert_eq!(termination_rule([Prepared, PreCommitted, Prepared]), Command::DoCommit);
        assert_eq!(termination_rule([Prepared, Prepared]), Command::DoAbort);
        assert_eq!(termination_rule([Aborted, Prepared]), Command::DoAbort);
        assert_eq!(termination_rule([Committed, PreCommitted]), Command::DoCommit);
        assert_eq!(termination_rule([Working]), Command::DoAbort);
    }
}
