//! Processes that exercise the logical clocks with random local events and
//! messages, recording every stamp so the clock condition can be checked.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clocks::{vc_compare, CausalOrder, LogicalTimestamp, MergeRule, VectorTimestamp};
use crate::simnet::{Ctx, Pid, Process, Tick};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockDemoParams {
    pub events_per_process: usize,
    /// Chance that an event is a send rather than a local step.
    pub send_probability: f64,
    /// Events are spread over `[1, horizon]`.
    pub horizon: Tick,
    pub rule: MergeRule,
}

impl Default for ClockDemoParams {
    fn default() -> Self {
        Self {
            events_per_process: 8,
            send_probability: 0.5,
            horizon: 50,
            rule: MergeRule::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stamp {
    Lamport(LogicalTimestamp),
    Vector(VectorTimestamp),
}

impl std::fmt::Display for Stamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stamp::Lamport(t) => write!(f, "{t}"),
            Stamp::Vector(v) => write!(f, "{:?}", v.components()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamped {
    pub id: (Pid, usize),
    pub stamp: Stamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoEvent;

#[derive(Debug, Clone)]
pub struct ClockDemoNode {
    stamp: Stamp,
    rule: MergeRule,
    params: ClockDemoParams,
    sent: usize,
    /// Stamps of this process's events in order.
    pub history: Vec<Stamp>,
    pub sends: BTreeMap<(Pid, usize), Stamp>,
    pub receives: BTreeMap<(Pid, usize), Stamp>,
}

impl ClockDemoNode {
    pub fn cluster(n: usize, vector: bool, params: &ClockDemoParams) -> Vec<Self> {
        (0..n)
            .map(|p| ClockDemoNode {
                stamp: if vector {
                    Stamp::Vector(VectorTimestamp::new(n, p).expect("p < n"))
                } else {
                    Stamp::Lamport(LogicalTimestamp::new(p))
                },
                rule: params.rule,
                params: params.clone(),
                sent: 0,
                history: Vec::new(),
                sends: BTreeMap::new(),
                receives: BTreeMap::new(),
            })
            .collect()
    }

    fn local(&mut self) {
        self.stamp = match &self.stamp {
            Stamp::Lamport(t) => Stamp::Lamport(t.tick()),
            Stamp::Vector(v) => Stamp::Vector(v.clone().local_event()),
        };
        self.history.push(self.stamp.clone());
    }
}

/// Whether every send is stamped before its receive, and every process's
/// stamps increase, under the clock's comparison.
pub fn clock_condition(nodes: &[ClockDemoNode]) -> Result<(), String> {
    let before = |a: &Stamp, b: &Stamp| match (a, b) {
        (Stamp::Lamport(x), Stamp::Lamport(y)) => x.value < y.value,
        (Stamp::Vector(x), Stamp::Vector(y)) => vc_compare(x, y) == Ok(CausalOrder::Before),
        _ => false,
    };
    for (p, node) in nodes.iter().enumerate() {
        for w in node.history.windows(2) {
            if !before(&w[0], &w[1]) {
                return Err(format!("process {p}: {} then {}", w[0], w[1]));
            }
        }
    }
    let sends: BTreeMap<_, _> = nodes.iter().flat_map(|n| n.sends.iter()).collect();
    for node in nodes {
        for (id, r) in &node.receives {
            let s = sends.get(id).ok_or_else(|| format!("receive of unknown message {id:?}"))?;
            if !before(s, r) {
                return Err(format!("message {id:?}: sent at {s}, received at {r}"));
            }
        }
    }
    Ok(())
}

impl Process for ClockDemoNode {
    type Msg = Stamped;
    type Timer = DemoEvent;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Stamped, DemoEvent>) {
        let horizon = self.params.horizon.max(1);
        for _ in 0..self.params.events_per_process {
            let at = ctx.rng().random_range(1..=horizon);
            ctx.set_timer(at, DemoEvent);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Stamped, DemoEvent>, _from: Pid, msg: Stamped) {
        self.stamp = match (&self.stamp, &msg.stamp) {
            (Stamp::Lamport(t), Stamp::Lamport(r)) => Stamp::Lamport(t.receive(r.value, self.rule)),
            (Stamp::Vector(v), Stamp::Vector(r)) => match v.clone().receive(r) {
                Ok(v) => Stamp::Vector(v),
                Err(e) => {
                    ctx.fault(e.to_string());
                    return;
                }
            },
            _ => {
                ctx.fault("mixed clock kinds");
                return;
            }
        };
        self.history.push(self.stamp.clone());
        self.receives.insert(msg.id, self.stamp.clone());
        ctx.note(format!("recv {:?} {}", msg.id, self.stamp));
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Stamped, DemoEvent>, _timer: DemoEvent) {
        self.local();
        let n = ctx.n();
        let send = n > 1 && ctx.rng().random_bool(self.params.send_probability.clamp(0.0, 1.0));
        if send {
            let me = ctx.me();
            let mut dst = ctx.rng().random_range(0..n - 1);
            if dst >= me {
                dst += 1;
            }
            let id = (me, self.sent);
            self.sent += 1;
            self.sends.insert(id, self.stamp.clone());
            ctx.note(format!("send {id:?} to {dst} {}", self.stamp));
            ctx.send(dst, Stamped { id, stamp: self.stamp.clone() });
        } else {
            ctx.note(format!("local {}", self.stamp));
        }
    }
}
