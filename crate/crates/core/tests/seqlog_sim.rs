use quorumlab::seqlog::{prefix_check, RaftNode, RoleMode, SeqConfig};
use quorumlab::simnet::{ChannelSpec, HaltReason, SimConfig, Simulator};

fn values(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("v{i}")).collect()
}

fn complete(sim: &Simulator<RaftNode>, k: usize) -> bool {
    sim.correct().all(|p| sim.process(p).log().decided_upto() == k)
}

fn run(n: usize, seed: u64, cfg: &SeqConfig, budget: u64) -> (Simulator<RaftNode>, HaltReason, bool) {
    let sc = SimConfig::new(n, seed, ChannelSpec::perfect(3));
    let mut sim = Simulator::new(sc, RaftNode::cluster(n, cfg, 3)).unwrap();
    let k = cfg.values.len();
    let mut prefix_ok = true;
    let out = sim.run_observed(
        |s| complete(s, k),
        |s| prefix_ok &= prefix_check(s.processes().iter().map(|p| p.log())),
        budget,
    );
    (sim, out.halted_by, prefix_ok)
}

#[test]
fn four_replicas_agree_on_three_values() {
    let cfg = SeqConfig { values: values(3), ..SeqConfig::default() };
    let (sim, halted, prefix_ok) = run(4, 1, &cfg, 50_000);
    assert_eq!(halted, HaltReason::Predicate);
    assert!(prefix_ok);
    for p in 0..4 {
        assert_eq!(sim.process(p).log().entries(), ["v0", "v1", "v2"]);
    }
}

#[test]
fn empty_sequence_leaves_logs_empty() {
    let cfg = SeqConfig::default();
    let (sim, halted, _) = run(3, 1, &cfg, 2_000);
    assert_eq!(halted, HaltReason::Predicate);
    assert!(sim.processes().iter().all(|p| p.log().entries().is_empty()));
}

#[test]
fn fixed_leader_without_election() {
    let cfg = SeqConfig { values: values(4), elect: false, ..SeqConfig::default() };
    let (sim, halted, prefix_ok) = run(3, 2, &cfg, 50_000);
    assert_eq!(halted, HaltReason::Predicate);
    assert!(prefix_ok);
    assert!(sim.processes().iter().all(|p| p.log().decided_upto() == 4));
}

#[test]
fn no_crash_means_one_leader() {
    for seed in 0..10 {
        let cfg = SeqConfig { values: values(5), ..SeqConfig::default() };
        let (sim, halted, _) = run(5, seed, &cfg, 50_000);
        assert_eq!(halted, HaltReason::Predicate);
        let leaders: std::collections::BTreeSet<_> = sim.processes().iter().filter_map(|p| p.current_leader()).collect();
        assert_eq!(leaders.len(), 1, "seed {seed}");
    }
}

#[test]
fn leader_crash_mid_sequence_recovers() {
    let mut crashed_runs = 0;
    for seed in 0..100 {
        let cfg = SeqConfig { values: values(10), crash_leader_after_slot: Some(4), ..SeqConfig::default() };
        let (sim, halted, prefix_ok) = run(5, seed, &cfg, 200_000);
        assert!(prefix_ok, "seed {seed}");
        assert_eq!(halted, HaltReason::Predicate, "seed {seed}");
        if sim.correct().count() == 4 {
            crashed_runs += 1;
        }
        let first = sim.correct().next().unwrap();
        for p in sim.correct() {
            assert_eq!(sim.process(p).log(), sim.process(first).log());
        }
    }
    assert_eq!(crashed_runs, 100);
}

#[test]
fn alg_role_modes_replicate() {
    for roles in [RoleMode::Alg1, RoleMode::Alg2] {
        let cfg = SeqConfig { values: values(4), roles, ..SeqConfig::default() };
        let (sim, halted, prefix_ok) = run(5, 3, &cfg, 50_000);
        assert_eq!(halted, HaltReason::Predicate, "{roles:?}");
        assert!(prefix_ok);
        assert!(sim.processes().iter().all(|p| p.log().decided_upto() == 4));
    }
}

#[test]
fn majority_crash_stalls_but_stays_consistent() {
    let cfg = SeqConfig { values: values(50), ..SeqConfig::default() };
    let sc = SimConfig::new(5, 4, ChannelSpec::perfect(3)).with_crash(0, 60).with_crash(1, 60).with_crash(2, 60);
    let mut sim = Simulator::new(sc, RaftNode::cluster(5, &cfg, 3)).unwrap();
    let mut prefix_ok = true;
    let out = sim.run_observed(
        |_| false,
        |s| prefix_ok &= prefix_check(s.processes().iter().map(|p| p.log())),
        30_000,
    );
    assert_eq!(out.halted_by, HaltReason::Budget);
    assert!(prefix_ok);
    assert!(sim.correct().all(|p| sim.process(p).log().decided_upto() < 50));
}
