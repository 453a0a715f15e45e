//! Recorded executions and a brute-force happens-before relation.
//!
//! An [`Execution`] is the per-process event history of a run. The
//! happens-before relation is computed directly from the event graph
//! (process order plus send→receive edges) by transitive closure. It is the
//! oracle the clock implementations are tested against.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clocks::{LogicalTimestamp, MergeRule, VectorTimestamp};
use crate::simnet::Pid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Local,
    Send { msg: u64, to: Pid },
    Receive { msg: u64, from: Pid },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    /// `history[p]` is the event sequence of process `p` in local order.
    pub history: Vec<Vec<EventKind>>,
}

/// Flattened position of an event: `(process, index in its history)`.
pub type EventRef = (Pid, usize);

impl Execution {
    pub fn new(n: usize) -> Self {
        Self {
            history: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.history.len()
    }

    pub fn record(&mut self, pid: Pid, kind: EventKind) {
        self.history[pid].push(kind);
    }

    /// A random execution with `events` events spread over `n` processes.
    /// Every receive matches an earlier send.
    pub fn random<R: Rng>(n: usize, events: usize, rng: &mut R) -> Self {
        let mut exec = Self::new(n);
        let mut in_flight: Vec<(u64, Pid, Pid)> = Vec::new();
        let mut next_msg = 0;
        for _ in 0..events {
            let pid = rng.random_range(0..n);
            let deliverable: Vec<usize> = in_flight
                .iter()
                .enumerate()
                .filter(|(_, m)| m.2 == pid)
                .map(|(i, _)| i)
                .collect();
            let choice = rng.random_range(0..3);
            if choice == 2 && !deliverable.is_empty() {
                let idx = deliverable[rng.random_range(0..deliverable.len())];
                let (msg, from, _) = in_flight.swap_remove(idx);
                exec.record(pid, EventKind::Receive { msg, from });
            } else if choice == 1 && n > 1 {
                let mut to = rng.random_range(0..n - 1);
                if to >= pid {
                    to += 1;
                }
                exec.record(pid, EventKind::Send { msg: next_msg, to });
                in_flight.push((next_msg, pid, to));
                next_msg += 1;
            } else {
                exec.record(pid, EventKind::Local);
            }
        }
        exec
    }

    pub fn events(&self) -> Vec<EventRef> {
        self.history
            .iter()
            .enumerate()
            .flat_map(|(p, h)| (0..h.len()).map(move |i| (p, i)))
            .collect()
    }

    /// Direct edges of the event graph.
    pub fn edges(&self) -> Vec<(EventRef, EventRef)> {
        let mut edges = Vec::new();
        let mut sends = std::collections::HashMap::new();
        for (p, h) in self.history.iter().enumerate() {
            for (i, e) in h.iter().enumerate() {
                if i > 0 {
                    edges.push(((p, i - 1), (p, i)));
                }
                if let EventKind::Send { msg, .. } = e {
                    sends.insert(*msg, (p, i));
                }
            }
        }
        for (p, h) in self.history.iter().enumerate() {
            for (i, e) in h.iter().enumerate() {
                if let EventKind::Receive { msg, .. } = e {
                    if let Some(src) = sends.get(msg) {
                        edges.push((*src, (p, i)));
                    }
                }
            }
        }
        edges
    }

    /// Transitive closure of the event graph: `hb[a][b]` iff event `a`
    /// happens before event `b`, indexed by position in [`Execution::events`].
    pub fn happens_before(&self) -> Vec<Vec<bool>> {
        let events = self.events();
        let index: std::collections::HashMap<EventRef, usize> =
            events.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let m = events.len();
        let mut hb = vec![vec![false; m]; m];
        for (a, b) in self.edges() {
            hb[index[&a]][index[&b]] = true;
        }
        for k in 0..m {
            for i in 0..m {
                if hb[i][k] {
                    for j in 0..m {
                        if hb[k][j] {
                            hb[i][j] = true;
                        }
                    }
                }
            }
        }
        hb
    }

    /// Replays the execution through vector clocks, one stamp per event in
    /// [`Execution::events`] order.
    pub fn vector_stamps(&self) -> Vec<VectorTimestamp> {
        self.replay(
            |p| VectorTimestamp::new(self.n(), p).expect("pid in range"),
            |c| c.clone().local_event(),
            |c, sent| c.clone().receive(sent).expect("same cluster size"),
        )
    }

    pub fn lamport_stamps(&self, rule: MergeRule) -> Vec<LogicalTimestamp> {
        self.replay(
            LogicalTimestamp::new,
            |c| c.tick(),
            |c, sent| c.receive(sent.value, rule),
        )
    }

    fn replay<C: Clone>(
        &self,
        init: impl Fn(Pid) -> C,
        local: impl Fn(&C) -> C,
        receive: impl Fn(&C, &C) -> C,
    ) -> Vec<C> {
        let n = self.n();
        let mut clocks: Vec<C> = (0..n).map(&init).collect();
        let mut cursor = vec![0usize; n];
        let mut stamps: Vec<Vec<Option<C>>> =
            self.history.iter().map(|h| vec![None; h.len()]).collect();
        let mut sent: std::collections::HashMap<u64, C> = std::collections::HashMap::new();
        // Round-robin until every process is drained; a receive waits for its send.
        loop {
            let mut progressed = false;
            for p in 0..n {
                while cursor[p] < self.history[p].len() {
                    let i = cursor[p];
                    let next = match self.history[p][i] {
                        EventKind::Local => local(&clocks[p]),
                        EventKind::Send { msg, .. } => {
                            let c = local(&clocks[p]);
                            sent.insert(msg, c.clone());
                            c
                        }
                        EventKind::Receive { msg, .. } => match sent.get(&msg) {
                            Some(s) => receive(&clocks[p], s),
                            None => break,
                        },
                    };
                    clocks[p] = next.clone();
                    stamps[p][i] = Some(next);
                    cursor[p] += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        stamps
            .into_iter()
            .flatten()
            .map(|s| s.expect("every receive has a matching send"))
            .collect()
    }
}
