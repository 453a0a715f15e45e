use std::collections::BTreeMap;

use quorumlab::paxos::{PaxosConfig, PaxosNode};
use quorumlab::simnet::{metrics, ChannelSpec, HaltReason, SimConfig, Simulator, TraceKind};

fn all_decided(sim: &Simulator<PaxosNode>) -> bool {
    sim.correct().all(|p| sim.process(p).decided().is_some())
}

#[test]
fn perfect_channel_run_decides_a_proposed_value() {
    let cfg = PaxosConfig::default();
    let mut sim = Simulator::new(SimConfig::new(3, 7, ChannelSpec::perfect(3)), PaxosNode::cluster(3, &cfg)).unwrap();
    let out = sim.run_until(all_decided, 10_000);
    assert_eq!(out.halted_by, HaltReason::Predicate);
    for p in 0..3 {
        assert_eq!(sim.process(p).decided(), Some(&"A".to_string()));
    }
}

#[test]
fn single_proposer_message_counts() {
    let cfg = PaxosConfig::default();
    let mut sim = Simulator::new(SimConfig::new(3, 1, ChannelSpec::perfect(1)), PaxosNode::cluster(3, &cfg)).unwrap();
    sim.run_until(|s| s.is_idle(), 10_000);
    let m = metrics(sim.trace());
    // 3 prepare, 3 promise, 2 accept, 2 x 3 accepted
    assert_eq!(m.message_count, 14);
    assert_eq!(m.communication_steps, 4);
    assert_eq!(sim.trace().iter().filter(|r| r.kind == TraceKind::Decide).count(), 3);
}

#[test]
fn dueling_proposers_agree() {
    let cfg = PaxosConfig {
        proposers: (0..5).map(|p| (p, format!("v{p}"))).collect::<BTreeMap<_, _>>(),
        ..PaxosConfig::default()
    };
    for seed in 0..50 {
        let sc = SimConfig::new(5, seed, ChannelSpec::fair_loss(0.2, 0.1, 4)).with_crash(1, 30).with_crash(3, 60);
        let mut sim = Simulator::new(sc, PaxosNode::cluster(5, &cfg)).unwrap();
        let out = sim.run_until(all_decided, 10_000);
        assert_eq!(out.halted_by, HaltReason::Predicate, "seed {seed}: {out:?}");
        let vals: std::collections::BTreeSet<_> = (0..5).filter_map(|p| sim.process(p).decided()).collect();
        assert_eq!(vals.len(), 1, "seed {seed}");
    }
}
