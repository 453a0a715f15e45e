//! Replica convergence: an LWW map CRDT, push gossip, and Merkle-tree based
//! divergence detection.

mod lww;
pub mod merkle;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use lww::{lww_majority_read, lww_merge, LwwEntry, LwwMap};
use merkle::{absent_hash, merkle_diff, value_hash, Hash, MerkleTree};

use crate::clocks::{LogicalTimestamp, MergeRule};
use crate::simnet::{Ctx, Pid, Process, Tick};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipState {
    pub owner: Pid,
    pub infected: bool,
    pub fanout: usize,
    pub rumor: Option<String>,
    pub rounds_remaining: u32,
}

impl GossipState {
    pub fn new(owner: Pid, fanout: usize) -> Self {
        Self {
            owner,
            infected: false,
            fanout: fanout.max(1),
            rumor: None,
            rounds_remaining: 0,
        }
    }

    /// Learns the rumor. Returns `true` on first infection.
    pub fn infect(&mut self, rumor: String, rounds: u32) -> bool {
        if self.infected {
            return false;
        }
        self.infected = true;
        self.rumor = Some(rumor);
        self.rounds_remaining = rounds;
        true
    }

    /// Picks up to `fanout` distinct peers to push the rumor to this round.
    pub fn gossip_round<R: Rng + ?Sized>(&mut self, peers: &[Pid], rng: &mut R) -> Vec<Pid> {
        if !self.infected || self.rounds_remaining == 0 {
            return Vec::new();
        }
        self.rounds_remaining -= 1;
        let others: Vec<Pid> = peers.iter().copied().filter(|p| *p != self.owner).collect();
        let k = self.fanout.min(others.len());
        others.choose_multiple(rng, k).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GossipConfig {
    pub fanout: usize,
    /// Rounds an infected process keeps pushing.
    pub rounds: u32,
    /// Defaults to the channel's maximum delay.
    pub round_interval: Option<Tick>,
    pub initially_infected: Vec<Pid>,
    pub rumor: String,
}

impl Default for GossipConfig {
    fn default() -> Self {
        Self {
            fanout: 2,
            rounds: 20,
            round_interval: None,
            initially_infected: vec![0],
            rumor: "rumor".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rumor(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipRound;

#[derive(Debug, Clone)]
pub struct GossipNode {
    pub state: GossipState,
    peers: Vec<Pid>,
    rounds: u32,
    interval: Tick,
    /// Time of infection.
    pub infected_at: Option<Tick>,
}

impl GossipNode {
    pub fn cluster(n: usize, config: &GossipConfig, max_delay: Tick) -> Vec<Self> {
        let interval = config.round_interval.unwrap_or(max_delay).max(1);
        (0..n)
            .map(|p| {
                let mut state = GossipState::new(p, config.fanout);
                if config.initially_infected.contains(&p) {
                    state.infect(config.rumor.clone(), config.rounds);
                }
                GossipNode {
                    infected_at: state.infected.then_some(0),
                    state,
                    peers: (0..n).collect(),
                    rounds: config.rounds,
                    interval,
                }
            })
            .collect()
    }

    pub fn round_interval(&self) -> Tick {
        self.interval
    }
}

impl Process for GossipNode {
    type Msg = Rumor;
    type Timer = GossipRound;

    fn on_start(&mut self, ctx: &mut Ctx<'_, Rumor, GossipRound>) {
        if self.state.infected {
            ctx.set_timer(self.interval, GossipRound);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, Rumor, GossipRound>, _from: Pid, msg: Rumor) {
        if self.state.infect(msg.0, self.rounds) {
            self.infected_at = Some(ctx.now());
            ctx.note("infected");
            ctx.set_timer(self.interval, GossipRound);
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Rumor, GossipRound>, _timer: GossipRound) {
        let targets = self.state.gossip_round(&self.peers, ctx.rng());
        let rumor = Rumor(self.state.rumor.clone().unwrap_or_default());
        ctx.send_all(targets, rumor);
        if self.state.rounds_remaining > 0 {
            ctx.set_timer(self.interval, GossipRound);
        }
    }
}

/// A write a replica performs at a given time; `value: None` deletes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutOp {
    pub pid: Pid,
    pub at: Tick,
    pub key: String,
    pub value: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncMode {
    /// Push the whole map.
    #[default]
    Full,
    /// Exchange leaf digests and ship only the diverging keys.
    Merkle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    pub mode: SyncMode,
    pub puts: Vec<PutOp>,
    /// Ticks between anti-entropy exchanges with a random peer.
    pub interval: Tick,
    /// Exchanges per replica; the run goes quiet afterwards.
    pub exchanges: u32,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            mode: SyncMode::Full,
            puts: Vec::new(),
            interval: 10,
            exchanges: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncMsg {
    State(LwwMap),
    Digest(Vec<(String, Hash)>),
    /// Entries for diverging keys, plus the keys the sender wants back.
    Entries { map: LwwMap, want: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncTimer {
    Put(usize),
    Exchange,
}

fn entry_hash(e: &LwwEntry) -> Hash {
    value_hash(&serde_json::to_vec(e).expect("entries serialize"))
}

#[derive(Debug, Clone)]
pub struct ReplicaNode {
    pub map: LwwMap,
    clock: LogicalTimestamp,
    puts: Vec<PutOp>,
    mode: SyncMode,
    interval: Tick,
    exchanges_left: u32,
}

impl ReplicaNode {
    pub fn cluster(n: usize, config: &SyncConfig) -> Vec<Self> {
        (0..n)
            .map(|p| ReplicaNode {
                map: LwwMap::new(),
                clock: LogicalTimestamp::new(p),
                puts: config.puts.iter().filter(|op| op.pid == p).cloned().collect(),
                mode: config.mode,
                interval: config.interval.max(1),
                exchanges_left: config.exchanges,
            })
            .collect()
    }

    fn digest(&self) -> Vec<(String, Hash)> {
        self.map.entries().iter().map(|(k, e)| (k.clone(), entry_hash(e))).collect()
    }

    fn absorb(&mut self, map: &LwwMap) {
        self.clock = self.clock.receive(map.max_ts(), MergeRule::Standard);
        self.map.merge_from(map);
    }

    fn subset(&self, keys: &BTreeSet<String>) -> LwwMap {
        let mut out = LwwMap::new();
        for k in keys {
            if let Some(e) = self.map.entry(k) {
                out.put_entry(k.clone(), e.clone());
            }
        }
        out
    }
}

impl Process for ReplicaNode {
    type Msg = SyncMsg;
    type Timer = SyncTimer;

    fn on_start(&mut self, ctx: &mut Ctx<'_, SyncMsg, SyncTimer>) {
        for (i, op) in self.puts.iter().enumerate() {
            ctx.set_timer(op.at, SyncTimer::Put(i));
        }
        if self.exchanges_left > 0 && ctx.n() > 1 {
            ctx.set_timer(self.interval, SyncTimer::Exchange);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx<'_, SyncMsg, SyncTimer>, from: Pid, msg: SyncMsg) {
        match msg {
            SyncMsg::State(map) => self.absorb(&map),
            SyncMsg::Digest(theirs) => {
                let theirs: BTreeMap<String, Hash> = theirs.into_iter().collect();
                let universe: BTreeSet<String> = theirs.keys().chain(self.map.entries().keys()).cloned().collect();
                let mine: BTreeMap<String, Hash> = self.digest().into_iter().collect();
                let pad = |m: &BTreeMap<String, Hash>| {
                    let items = universe.iter().map(|k| (k.clone(), m.get(k).copied().unwrap_or_else(absent_hash))).collect();
                    MerkleTree::from_value_hashes(items).expect("sorted universe")
                };
                let diff = merkle_diff(&pad(&mine), &pad(&theirs)).expect("same universe");
                ctx.note(format!("diff keys={} comparisons={}", diff.keys.len(), diff.comparisons));
                if !diff.keys.is_empty() {
                    let map = self.subset(&diff.keys);
                    ctx.send(from, SyncMsg::Entries { map, want: diff.keys.into_iter().collect() });
                }
            }
            SyncMsg::Entries { map, want } => {
                self.absorb(&map);
                if !want.is_empty() {
                    let map = self.subset(&want.into_iter().collect());
                    ctx.send(from, SyncMsg::Entries { map, want: Vec::new() });
                }
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, SyncMsg, SyncTimer>, timer: SyncTimer) {
        match timer {
            SyncTimer::Put(i) => {
                let op = self.puts[i].clone();
                self.clock = self.clock.tick();
                self.map.put_entry(op.key.clone(), LwwEntry { value: op.value.clone(), ts: self.clock });
                ctx.note(format!("put {} {} at {}", op.key, op.value.as_deref().unwrap_or("-"), self.clock));
            }
            SyncTimer::Exchange => {
                let me = ctx.me();
                let peers: Vec<Pid> = (0..ctx.n()).filter(|p| *p != me).collect();
                let peer = *peers.choose(ctx.rng()).expect("at least one peer");
                let msg = match self.mode {
                    SyncMode::Full => SyncMsg::State(self.map.clone()),
                    SyncMode::Merkle => SyncMsg::Digest(self.digest()),
                };
                ctx.send(peer, msg);
                self.exchanges_left -= 1;
                if self.exchanges_left > 0 {
                    ctx.set_timer(self.interval, SyncTimer::Exchange);
                }
            }
        }
    }
}
