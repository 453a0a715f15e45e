//! Bounded exhaustive state exploration.
//!
//! Depth-first search over every action sequence up to a depth bound, with a
//! visited table so states reached again with no more remaining depth are
//! pruned.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Debug;
use std::hash::Hash;

use crate::paxos::{PaxosCore, PaxosMsg, ProposerPhase, Value};
use crate::simnet::Pid;

pub trait Model {
    type State: Clone + Eq + Hash;
    type Action: Clone + Debug;

    fn actions(&self, state: &Self::State) -> Vec<Self::Action>;
    fn apply(&self, state: &Self::State, action: &Self::Action) -> Self::State;
    /// Safety check run on every reached state.
    fn check(&self, state: &Self::State) -> Result<(), String>;
}

#[derive(Debug, Clone)]
pub struct Counterexample<A> {
    pub violation: String,
    pub path: Vec<A>,
}

#[derive(Debug, Clone)]
pub struct ExploreReport<A> {
    pub distinct_states: usize,
    pub transitions: u64,
    pub counterexample: Option<Counterexample<A>>,
}

pub fn explore<M: Model>(model: &M, init: M::State, depth: usize) -> ExploreReport<M::Action> {
    let mut ex = Explorer {
        model,
        visited: HashMap::new(),
        transitions: 0,
        path: Vec::new(),
    };
    let counterexample = ex.dfs(&init, depth).err();
    ExploreReport {
        distinct_states: ex.visited.len(),
        transitions: ex.transitions,
        counterexample,
    }
}

struct Explorer<'m, M: Model> {
    model: &'m M,
    visited: HashMap<M::State, usize>,
    transitions: u64,
    path: Vec<M::Action>,
}

impl<M: Model> Explorer<'_, M> {
    fn dfs(&mut self, state: &M::State, left: usize) -> Result<(), Counterexample<M::Action>> {
        if let Some(seen) = self.visited.get(state) {
            if *seen >= left {
                return Ok(());
            }
        }
        self.visited.insert(state.clone(), left);
        if let Err(violation) = self.model.check(state) {
            return Err(Counterexample {
                violation,
                path: self.path.clone(),
            });
        }
        if left == 0 {
            return Ok(());
        }
        for action in self.model.actions(state) {
            self.transitions += 1;
            let next = self.model.apply(state, &action);
            self.path.push(action);
            self.dfs(&next, left - 1)?;
            self.path.pop();
        }
        Ok(())
    }
}

/// Single-value Paxos on `n` processes, each hosting an acceptor and a learner.
#[derive(Debug, Clone)]
pub struct PaxosModel {
    pub n: usize,
    pub proposals: Vec<(Pid, Value)>,
    pub max_crashes: usize,
    /// Whether a proposer may time out and restart with a higher ballot.
    pub timeouts: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PaxosWorld {
    pub nodes: Vec<PaxosCore>,
    /// In-flight messages as a sorted multiset of `(src, dst, msg)`.
    pub net: Vec<(Pid, Pid, PaxosMsg)>,
    pub crashed: BTreeSet<Pid>,
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaxosAction {
    Deliver(Pid, Pid, PaxosMsg),
    Crash(Pid),
    Timeout(Pid),
}

impl PaxosModel {
    pub fn init(&self) -> PaxosWorld {
        let mut w = PaxosWorld {
            nodes: (0..self.n)
                .map(|p| PaxosCore::new(p, self.n, self.proposals.iter().any(|(q, _)| *q == p)))
                .collect(),
            net: Vec::new(),
            crashed: BTreeSet::new(),
            fault: None,
        };
        for (p, v) in &self.proposals {
            let out = w.nodes[*p].propose(v.clone()).expect("fresh proposer");
            w.post(*p, out);
        }
        w
    }
}

impl PaxosWorld {
    fn post(&mut self, src: Pid, out: Vec<(Pid, PaxosMsg)>) {
        for (dst, m) in out {
            if !self.crashed.contains(&dst) {
                self.net.push((src, dst, m));
            }
        }
        self.net.sort();
    }

    pub fn decisions(&self) -> impl Iterator<Item = &Value> {
        self.nodes.iter().filter_map(|n| n.learner.decided())
    }
}

impl Model for PaxosModel {
    type State = PaxosWorld;
    type Action = PaxosAction;

    fn actions(&self, w: &PaxosWorld) -> Vec<PaxosAction> {
        let mut acts: Vec<PaxosAction> = Vec::new();
        for (i, (s, d, m)) in w.net.iter().enumerate() {
            // identical copies lead to identical successors
            if i > 0 && w.net[i - 1] == (*s, *d, m.clone()) {
                continue;
            }
            acts.push(PaxosAction::Deliver(*s, *d, m.clone()));
        }
        let alive = (0..self.n).filter(|p| !w.crashed.contains(p));
        if w.crashed.len() < self.max_crashes {
            acts.extend(alive.clone().map(PaxosAction::Crash));
        }
        if self.timeouts {
            for p in alive {
                if let Some(prop) = &w.nodes[p].proposer {
                    if matches!(prop.phase(), ProposerPhase::Prepared | ProposerPhase::Accepting) {
                        acts.push(PaxosAction::Timeout(p));
                    }
                }
            }
        }
        acts
    }

    fn apply(&self, w: &PaxosWorld, action: &PaxosAction) -> PaxosWorld {
        let mut w = w.clone();
        match action {
            PaxosAction::Deliver(s, d, m) => {
                let i = w
                    .net
                    .iter()
                    .position(|e| (e.0, e.1, &e.2) == (*s, *d, m))
                    .expect("action refers to an in-flight message");
                w.net.remove(i);
                let step = w.nodes[*d].handle(*s, m.clone());
                if let Some(f) = step.fault {
                    w.fault.get_or_insert(f);
                }
                w.post(*d, step.out);
            }
            PaxosAction::Crash(p) => {
                w.crashed.insert(*p);
                w.net.retain(|(_, d, _)| d != p);
            }
            PaxosAction::Timeout(p) => {
                let out = w.nodes[*p]
                    .proposer
                    .as_mut()
                    .expect("timeouts only for proposers")
                    .retry()
                    .expect("proposer has a value");
                w.post(*p, out);
            }
        }
        w
    }

    fn check(&self, w: &PaxosWorld) -> Result<(), String> {
        if let Some(f) = &w.fault {
            return Err(format!("integrity: {f}"));
        }
        let decided: BTreeSet<&Value> = w.decisions().collect();
        if decided.len() > 1 {
            return Err(format!("agreement: learners decided {decided:?}"));
        }
        if let Some(v) = decided.iter().find(|v| !self.proposals.iter().any(|(_, p)| p == **v)) {
            return Err(format!("validity: {v:?} was never proposed"));
        }
        Ok(())
    }
}
