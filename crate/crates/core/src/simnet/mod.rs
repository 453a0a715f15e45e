//! Deterministic discrete-event network simulator.
//!
//! Every protocol in this crate is a [`Process`]: a state machine driven by
//! message deliveries and timer expirations. The [`Simulator`] owns one
//! process per node, a seeded random generator, and a single event queue
//! ordered by `(time, sequence number, actor)`. Each call to
//! [`Simulator::step`] handles exactly one event and appends exactly one
//! [`TraceRecord`].
//!
//! Outputs of a handler (sends, notes, a self-crash) are processed at the
//! same virtual time before any other queued event, so a handler's effects
//! are atomic with respect to crashes and appear in the trace directly after
//! the event that caused them.

mod config;
mod metrics;
mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{
    validate_groups, ChannelKind, ChannelSpec, CrashAt, DelaySpike, PartitionWindow, SimConfig,
};
pub use metrics::{metrics, Metrics};
pub use trace::{read_trace, write_trace, Detail, TraceKind, TraceRecord};

use crate::error::{Error, Result};

pub type Pid = usize;
/// Virtual time in integer ticks.
pub type Tick = u64;

/// The simulator's random generator type.
pub type SimRng = ChaCha8Rng;

/// A protocol state machine hosted by the simulator.
pub trait Process {
    type Msg: Clone + fmt::Debug;
    type Timer: Clone + fmt::Debug;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Self::Msg, Self::Timer>) {
        let _ = ctx;
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self::Msg, Self::Timer>, from: Pid, msg: Self::Msg);

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Self::Msg, Self::Timer>, timer: Self::Timer) {
        let _ = (ctx, timer);
    }
}

enum Action<M, T> {
    Send(Pid, M),
    Timer(Tick, T),
    Note(TraceKind, String),
    Fault(String),
    Halt,
}

/// Handle given to a [`Process`] while it handles one event.
pub struct Ctx<'a, M, T> {
    me: Pid,
    now: Tick,
    n: usize,
    rng: &'a mut SimRng,
    actions: Vec<Action<M, T>>,
}

impl<'a, M: Clone, T> Ctx<'a, M, T> {
    pub fn me(&self) -> Pid {
        self.me
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The simulator's seeded generator, the only randomness a protocol may use.
    pub fn rng(&mut self) -> &mut SimRng {
        self.rng
    }

    pub fn send(&mut self, dst: Pid, msg: M) {
        self.actions.push(Action::Send(dst, msg));
    }

    /// Sends to every process, including the sender.
    pub fn broadcast(&mut self, msg: M) {
        for dst in 0..self.n {
            self.send(dst, msg.clone());
        }
    }

    pub fn send_all(&mut self, dsts: impl IntoIterator<Item = Pid>, msg: M) {
        for dst in dsts {
            self.send(dst, msg.clone());
        }
    }

    pub fn set_timer(&mut self, after: Tick, timer: T) {
        self.actions.push(Action::Timer(after, timer));
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.actions.push(Action::Note(TraceKind::StateNote, text.into()));
    }

    pub fn decide(&mut self, text: impl Into<String>) {
        self.actions.push(Action::Note(TraceKind::Decide, text.into()));
    }

    /// Reports a safety violation; the run halts after this step.
    pub fn fault(&mut self, text: impl Into<String>) {
        self.actions.push(Action::Fault(text.into()));
    }

    /// Crash this process once the current handler's outputs are flushed.
    pub fn halt(&mut self) {
        self.actions.push(Action::Halt);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessStatus {
    Correct,
    Crashed { at: Tick },
}

impl ProcessStatus {
    pub fn is_correct(&self) -> bool {
        matches!(self, ProcessStatus::Correct)
    }
}

#[derive(Debug, Clone)]
pub struct Envelope<M> {
    pub id: u64,
    pub src: Pid,
    pub dst: Pid,
    pub payload: M,
    pub sent_at: Tick,
    pub deliver_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    Predicate,
    Exhausted,
    Budget,
    /// A protocol reported a safety violation.
    Fault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub steps: u64,
    pub halted_by: HaltReason,
}

/// The trace index and message of the first reported fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub index: usize,
    pub message: String,
}

enum Event<M, T> {
    Send(Envelope<M>),
    Deliver { env: Envelope<M>, lost: Option<&'static str> },
    Duplicate(Envelope<M>),
    Retransmit(Envelope<M>),
    Timer { pid: Pid, timer: T },
    Crash(Pid),
    Note { pid: Pid, kind: TraceKind, text: String },
    Fault { pid: Pid, text: String },
    Partition(Option<Vec<Vec<Pid>>>),
}

struct Scheduled<M, T> {
    time: Tick,
    seq: u64,
    actor: Pid,
    event: Event<M, T>,
}

impl<M, T> Scheduled<M, T> {
    fn key(&self) -> (Tick, u64, Pid) {
        (self.time, self.seq, self.actor)
    }
}

impl<M, T> PartialEq for Scheduled<M, T> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<M, T> Eq for Scheduled<M, T> {}

impl<M, T> PartialOrd for Scheduled<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M, T> Ord for Scheduled<M, T> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

pub struct Simulator<P: Process> {
    config: SimConfig,
    procs: Vec<P>,
    status: Vec<ProcessStatus>,
    now: Tick,
    rng: SimRng,
    queue: BinaryHeap<Scheduled<P::Msg, P::Timer>>,
    immediate: VecDeque<Event<P::Msg, P::Timer>>,
    next_seq: u64,
    next_envelope: u64,
    group_of: Option<Vec<usize>>,
    fifo_horizon: HashMap<(Pid, Pid), Tick>,
    acked: HashSet<u64>,
    trace: Vec<TraceRecord>,
    fault: Option<Fault>,
}

impl<P: Process> Simulator<P> {
    pub fn new(config: SimConfig, procs: Vec<P>) -> Result<Self> {
        config.validate()?;
        if procs.len() != config.n_processes {
            return Err(Error::Config(format!(
                "expected {} state machines, got {}",
                config.n_processes,
                procs.len()
            )));
        }
        let n = procs.len();
        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            procs,
            status: vec![ProcessStatus::Correct; n],
            now: 0,
            queue: BinaryHeap::new(),
            immediate: VecDeque::new(),
            next_seq: 0,
            next_envelope: 0,
            group_of: None,
            fifo_horizon: HashMap::new(),
            acked: HashSet::new(),
            trace: Vec::new(),
            fault: None,
            config,
        };
        for c in sim.config.crash_schedule.clone() {
            sim.schedule(c.at, c.pid, Event::Crash(c.pid));
        }
        for w in sim.config.partition_schedule.clone() {
            sim.schedule(w.start, 0, Event::Partition(Some(w.groups)));
            sim.schedule(w.end, 0, Event::Partition(None));
        }
        for pid in 0..n {
            sim.invoke(pid, |p, ctx| p.on_start(ctx));
        }
        Ok(sim)
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn n(&self) -> usize {
        self.procs.len()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn process(&self, pid: Pid) -> &P {
        &self.procs[pid]
    }

    pub fn processes(&self) -> &[P] {
        &self.procs
    }

    pub fn status(&self, pid: Pid) -> ProcessStatus {
        self.status[pid]
    }

    pub fn is_correct(&self, pid: Pid) -> bool {
        self.status[pid].is_correct()
    }

    pub fn correct(&self) -> impl Iterator<Item = Pid> + '_ {
        (0..self.n()).filter(|p| self.is_correct(*p))
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceRecord> {
        self.trace
    }

    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.immediate.is_empty()
    }

    /// Crash `pid` at virtual time `at` (immediately if `at` is not in the future).
    pub fn crash(&mut self, pid: Pid, at: Tick) -> Result<()> {
        if pid >= self.n() {
            return Err(Error::PidOutOfRange { pid, n: self.n() });
        }
        if at <= self.now {
            self.immediate.push_back(Event::Crash(pid));
        } else {
            self.schedule(at, pid, Event::Crash(pid));
        }
        Ok(())
    }

    /// Cross-group messages are dropped until [`Simulator::heal`].
    pub fn partition(&mut self, groups: &[Vec<Pid>]) -> Result<()> {
        self.group_of = Some(validate_groups(groups, self.n())?);
        Ok(())
    }

    pub fn heal(&mut self) {
        self.group_of = None;
    }

    fn partitioned(&self, a: Pid, b: Pid) -> bool {
        self.group_of.as_ref().is_some_and(|g| g[a] != g[b])
    }

    fn schedule(&mut self, time: Tick, actor: Pid, event: Event<P::Msg, P::Timer>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled {
            time,
            seq,
            actor,
            event,
        });
    }

    fn invoke(&mut self, pid: Pid, f: impl FnOnce(&mut P, &mut Ctx<'_, P::Msg, P::Timer>)) {
        let mut ctx = Ctx {
            me: pid,
            now: self.now,
            n: self.procs.len(),
            rng: &mut self.rng,
            actions: Vec::new(),
        };
        f(&mut self.procs[pid], &mut ctx);
        let actions = ctx.actions;
        for action in actions {
            match action {
                Action::Send(dst, payload) => {
                    let id = self.next_envelope;
                    self.next_envelope += 1;
                    self.immediate.push_back(Event::Send(Envelope {
                        id,
                        src: pid,
                        dst,
                        payload,
                        sent_at: self.now,
                        deliver_at: self.now,
                    }));
                }
                Action::Timer(after, timer) => {
                    self.schedule(self.now + after, pid, Event::Timer { pid, timer });
                }
                Action::Note(kind, text) => self.immediate.push_back(Event::Note { pid, kind, text }),
                Action::Fault(text) => self.immediate.push_back(Event::Fault { pid, text }),
                Action::Halt => self.immediate.push_back(Event::Crash(pid)),
            }
        }
    }

    fn sample_delay(&mut self) -> Tick {
        let base = self.rng.random_range(1..=self.config.channel.max_delay);
        let extra: Tick = self
            .config
            .delay_spikes
            .iter()
            .filter(|s| s.start <= self.now && self.now < s.end)
            .map(|s| s.extra)
            .sum();
        base + extra
    }

    /// Draws the fate of one transmission attempt and queues its delivery.
    fn transmit(&mut self, mut env: Envelope<P::Msg>) -> Envelope<P::Msg> {
        let channel = self.config.channel.clone();
        let mut deliver_at = self.now + self.sample_delay();
        let mut lost = None;
        match channel.kind {
            ChannelKind::Perfect => {
                let horizon = self.fifo_horizon.entry((env.src, env.dst)).or_insert(0);
                deliver_at = deliver_at.max(*horizon);
                *horizon = deliver_at;
            }
            ChannelKind::FairLoss | ChannelKind::Stubborn => {
                if self.rng.random_bool(channel.drop_probability) {
                    lost = Some("lost");
                }
            }
        }
        if self.partitioned(env.src, env.dst) {
            lost = Some("partition");
        }
        env.sent_at = self.now;
        env.deliver_at = deliver_at;
        let dst = env.dst;
        if channel.kind != ChannelKind::Perfect && self.rng.random_bool(channel.duplicate_probability) {
            self.immediate.push_back(Event::Duplicate(env.clone()));
        }
        if channel.kind == ChannelKind::Stubborn {
            self.schedule(
                self.now + channel.retransmit_interval,
                env.src,
                Event::Retransmit(env.clone()),
            );
        }
        self.schedule(deliver_at, dst, Event::Deliver { env: env.clone(), lost });
        env
    }

    fn push_record(&mut self, kind: TraceKind, actor: Pid, detail: Detail) -> usize {
        self.trace.push(TraceRecord {
            time: self.now,
            kind,
            actor,
            detail,
        });
        self.trace.len() - 1
    }

    fn envelope_detail(env: &Envelope<P::Msg>, reason: Option<&str>) -> Detail {
        Detail::Envelope {
            id: env.id,
            src: env.src,
            dst: env.dst,
            sent_at: env.sent_at,
            deliver_at: env.deliver_at,
            payload: format!("{:?}", env.payload),
            reason: reason.map(str::to_string),
        }
    }

    fn next_event(&mut self) -> Option<(Pid, Event<P::Msg, P::Timer>)> {
        if let Some(ev) = self.immediate.pop_front() {
            return Some((usize::MAX, ev));
        }
        let s = self.queue.pop()?;
        debug_assert!(s.time >= self.now);
        self.now = s.time;
        Some((s.actor, s.event))
    }

    /// Handles the next event. Returns `None` when the queue is exhausted.
    pub fn step(&mut self) -> Option<&TraceRecord> {
        loop {
            let (_, event) = self.next_event()?;
            let idx = match event {
                Event::Send(env) => {
                    if !self.is_correct(env.src) {
                        continue;
                    }
                    let src = env.src;
                    let sent = self.transmit(env);
                    self.push_record(TraceKind::Send, src, Self::envelope_detail(&sent, None))
                }
                Event::Retransmit(env) => {
                    if self.acked.contains(&env.id) || !self.is_correct(env.src) || !self.is_correct(env.dst) {
                        continue;
                    }
                    let src = env.src;
                    let sent = self.transmit(env);
                    self.push_record(TraceKind::Send, src, Self::envelope_detail(&sent, Some("retransmit")))
                }
                Event::Duplicate(env) => {
                    if !self.is_correct(env.src) {
                        continue;
                    }
                    let mut copy = env.clone();
                    copy.deliver_at = self.now + self.sample_delay();
                    let rec = self.push_record(TraceKind::Duplicate, env.src, Self::envelope_detail(&copy, None));
                    self.schedule(copy.deliver_at, copy.dst, Event::Deliver { env: copy, lost: None });
                    rec
                }
                Event::Deliver { env, lost } => {
                    let reason = if !self.is_correct(env.dst) {
                        Some("crashed")
                    } else if lost.is_some() {
                        lost
                    } else if self.partitioned(env.src, env.dst) {
                        Some("partition")
                    } else {
                        None
                    };
                    if let Some(reason) = reason {
                        self.push_record(TraceKind::Drop, env.dst, Self::envelope_detail(&env, Some(reason)))
                    } else {
                        self.acked.insert(env.id);
                        let rec = self.push_record(TraceKind::Deliver, env.dst, Self::envelope_detail(&env, None));
                        let Envelope { src, dst, payload, .. } = env;
                        self.invoke(dst, |p, ctx| p.on_message(ctx, src, payload));
                        rec
                    }
                }
                Event::Timer { pid, timer } => {
                    if !self.is_correct(pid) {
                        continue;
                    }
                    let rec = self.push_record(TraceKind::TimerFire, pid, Detail::Timer(format!("{timer:?}")));
                    self.invoke(pid, |p, ctx| p.on_timer(ctx, timer));
                    rec
                }
                Event::Crash(pid) => {
                    if !self.is_correct(pid) {
                        continue;
                    }
                    self.status[pid] = ProcessStatus::Crashed { at: self.now };
                    self.push_record(TraceKind::Crash, pid, Detail::Text("crash-stop".into()))
                }
                Event::Note { pid, kind, text } => {
                    if !self.is_correct(pid) {
                        continue;
                    }
                    self.push_record(kind, pid, Detail::Text(text))
                }
                Event::Fault { pid, text } => {
                    let idx = self.push_record(TraceKind::StateNote, pid, Detail::Text(format!("fault: {text}")));
                    if self.fault.is_none() {
                        self.fault = Some(Fault { index: idx, message: text });
                    }
                    idx
                }
                Event::Partition(groups) => {
                    let text = match &groups {
                        Some(g) => format!("partition {g:?}"),
                        None => "heal".to_string(),
                    };
                    match groups {
                        // Validated with the config.
                        Some(g) => self.group_of = validate_groups(&g, self.n()).ok(),
                        None => self.group_of = None,
                    }
                    self.push_record(TraceKind::StateNote, 0, Detail::Text(text))
                }
            };
            return Some(&self.trace[idx]);
        }
    }

    /// Steps until `predicate` holds, the queue empties, the budget is spent,
    /// or a protocol reports a fault. The predicate only observes the simulator.
    pub fn run_until(&mut self, predicate: impl FnMut(&Self) -> bool, max_steps: u64) -> RunOutcome {
        self.run_observed(predicate, |_| {}, max_steps)
    }

    /// Like [`Simulator::run_until`], calling `observe` after every step.
    pub fn run_observed(
        &mut self,
        mut predicate: impl FnMut(&Self) -> bool,
        mut observe: impl FnMut(&Self),
        max_steps: u64,
    ) -> RunOutcome {
        let mut steps = 0;
        loop {
            if self.fault.is_some() {
                return RunOutcome { steps, halted_by: HaltReason::Fault };
            }
            // a handler's queued outputs are traced before the predicate looks again
            if (steps == 0 || self.immediate.is_empty()) && predicate(self) {
                return RunOutcome { steps, halted_by: HaltReason::Predicate };
            }
            if steps >= max_steps {
                return RunOutcome { steps, halted_by: HaltReason::Budget };
            }
            if self.step().is_none() {
                return RunOutcome { steps, halted_by: HaltReason::Exhausted };
            }
            steps += 1;
            observe(self);
        }
    }
}
