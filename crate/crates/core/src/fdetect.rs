//! Heartbeat failure detector with per-peer adaptive timeouts.
//!
//! Every peer starts out trusted. A peer that stays silent for longer than its
//! timeout becomes suspected; hearing from a suspected peer restores it and
//! grows its timeout, so after message delays stabilise the detector stops
//! making mistakes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simnet::{Ctx, Pid, Process, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub heartbeat_interval: Tick,
    pub initial_timeout: Tick,
    /// Added to a peer's timeout each time a suspicion of it turns out false.
    pub timeout_increment: Tick,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::with_timeout(5, 12)
    }
}

impl DetectorConfig {
    /// Increment defaults to half of the initial timeout.
    pub fn with_timeout(heartbeat_interval: Tick, initial_timeout: Tick) -> Self {
        Self {
            heartbeat_interval,
            initial_timeout,
            timeout_increment: (initial_timeout / 2).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heartbeat_interval == 0 || self.initial_timeout == 0 {
            return Err(Error::Config(
                "heartbeat_interval and initial_timeout must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorState {
    owner: Pid,
    alive: BTreeSet<Pid>,
    suspected: BTreeSet<Pid>,
    timeout_of: BTreeMap<Pid, Tick>,
    last_heard: BTreeMap<Pid, Tick>,
    heartbeat_interval: Tick,
    increment: Tick,
}

/// What one heartbeat interval produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntervalOutput {
    pub heartbeats: Vec<Pid>,
    pub newly_suspected: BTreeSet<Pid>,
}

impl DetectorState {
    /// Detector for `owner` watching `peers` (the owner itself is skipped).
    pub fn new(owner: Pid, peers: impl IntoIterator<Item = Pid>, config: &DetectorConfig) -> Self {
        let alive: BTreeSet<Pid> = peers.into_iter().filter(|p| *p != owner).collect();
        Self {
            owner,
            timeout_of: alive.iter().map(|p| (*p, config.initial_timeout)).collect(),
            last_heard: alive.iter().map(|p| (*p, 0)).collect(),
            alive,
            suspected: BTreeSet::new(),
            heartbeat_interval: config.heartbeat_interval,
            increment: config.timeout_increment,
        }
    }

    pub fn owner(&self) -> Pid {
        self.owner
    }

    pub fn alive(&self) -> &BTreeSet<Pid> {
        &self.alive
    }

    pub fn suspected(&self) -> &BTreeSet<Pid> {
        &self.suspected
    }

    pub fn is_suspected(&self, p: Pid) -> bool {
        self.suspected.contains(&p)
    }

    pub fn timeout_of(&self, p: Pid) -> Option<Tick> {
        self.timeout_of.get(&p).copied()
    }

    pub fn last_heard(&self, p: Pid) -> Option<Tick> {
        self.last_heard.get(&p).copied()
    }

    pub fn heartbeat_interval(&self) -> Tick {
        self.heartbeat_interval
    }

    pub fn peers(&self) -> impl Iterator<Item = Pid> + '_ {
        self.timeout_of.keys().copied()
    }

    /// Heartbeat every peer, suspected ones included, and suspect the silent.
    pub fn on_interval(&mut self, now: Tick) -> IntervalOutput {
        let heartbeats = self.peers().collect();
        let late: Vec<Pid> = self
            .alive
            .iter()
            .copied()
            .filter(|p| now.saturating_sub(self.last_heard[p]) > self.timeout_of[p])
            .collect();
        for p in &late {
            self.alive.remove(p);
            self.suspected.insert(*p);
        }
        IntervalOutput {
            heartbeats,
            newly_suspected: late.into_iter().collect(),
        }
    }

    /// Records liveness evidence from `from`. Returns `true` when this revised a
    /// suspicion, in which case the peer's timeout has grown.
    pub fn on_heartbeat(&mut self, from: Pid, now: Tick) -> Result<bool> {
        if from == self.owner {
            return Err(Error::SelfHeartbeat(from));
        }
        let Some(heard) = self.last_heard.get_mut(&from) else {
            return Ok(false);
        };
        *heard = (*heard).max(now);
        if self.suspected.remove(&from) {
            self.alive.insert(from);
            *self.timeout_of.get_mut(&from).expect("tracked peer") += self.increment;
            return Ok(true);
        }
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FdMsg {
    Heartbeat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FdTimer {
    Interval,
}

/// A process that only runs the failure detector.
#[derive(Debug, Clone)]
pub struct HeartbeatNode {
    pub detector: DetectorState,
}

impl HeartbeatNode {
    pub fn new(owner: Pid, n: usize, config: &DetectorConfig) -> Self {
        Self {
            detector: DetectorState::new(owner, 0..n, config),
        }
    }
}

/// Runs one interval of `detector` inside a simulator handler. Suspicions are
/// traced as state notes.
pub fn drive_interval<M: Clone, T>(
    detector: &mut DetectorState,
    ctx: &mut Ctx<'_, M, T>,
    heartbeat: M,
) -> BTreeSet<Pid> {
    let out = detector.on_interval(ctx.now());
    ctx.send_all(out.heartbeats, heartbeat);
    for p in &out.newly_suspected {
        ctx.note(format!("suspect {p}"));
    }
    out.newly_suspected
}

/// Feeds liveness evidence from `from` into `detector`, tracing a revision.
pub fn drive_heartbeat<M: Clone, T>(detector: &mut DetectorState, ctx: &mut Ctx<'_, M, T>, from: Pid) -> bool {
    match detector.on_heartbeat(from, ctx.now()) {
        Ok(true) => {
            let t = detector.timeout_of(from).unwrap_or_default();
            ctx.note(format!("restore {from} timeout={t}"));
            true
        }
        Ok(false) => false,
        Err(e) => {
            ctx.fault(e.to_string());
            false
        }
    }
}

impl Process for HeartbeatNode {
    type Msg = FdMsg;
    type Timer = FdTimer;

    fn on_start(&mut self, ctx: &mut Ctx<'_, FdMsg, FdTimer>) {
        ctx.set_timer(self.detector.heartbeat_interval, FdTimer::Interval);
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, FdMsg, FdTimer>, from: Pid, _msg: FdMsg) {
        drive_heartbeat(&mut self.detector, ctx, from);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, FdMsg, FdTimer>, _timer: FdTimer) {
        drive_interval(&mut self.detector, ctx, FdMsg::Heartbeat);
        ctx.set_timer(self.detector.heartbeat_interval, FdTimer::Interval);
    }
}
