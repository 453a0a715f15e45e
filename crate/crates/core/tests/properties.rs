use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use quorumlab::antientropy::merkle::{
    merkle_audit_proof, merkle_build, merkle_consistency_proof, merkle_diff, merkle_verify_audit,
    merkle_verify_consistency, MerkleTree,
};
use quorumlab::antientropy::{lww_merge, LwwEntry, LwwMap};
use quorumlab::causality::Execution;
use quorumlab::clocks::{vc_compare, CausalOrder, LogicalTimestamp, MergeRule};
use quorumlab::election::{quorum_size, Ballot};
use quorumlab::seqlog::{prefix_check, ReplicatedLog};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One write: key index, value (None deletes), timestamp value, owner.
type Put = (u8, Option<u8>, u64, usize);

fn put_strategy() -> impl Strategy<Value = Put> {
    (0u8..4, proptest::option::of(0u8..4), 0u64..6, 0usize..3)
}

fn apply(puts: &[Put]) -> LwwMap {
    let mut m = LwwMap::new();
    for &(k, v, ts, owner) in puts {
        m.put_entry(
            format!("k{k}"),
            LwwEntry {
                value: v.map(|v| format!("v{v}")),
                ts: LogicalTimestamp::at(ts, owner),
            },
        );
    }
    m
}

/// Sort every write by (timestamp, value) and keep the last per key.
fn lww_oracle(puts: &[Put]) -> BTreeMap<String, Option<String>> {
    let mut sorted: Vec<_> = puts
        .iter()
        .map(|&(k, v, ts, o)| ((LogicalTimestamp::at(ts, o), v.map(|v| format!("v{v}"))), format!("k{k}")))
        .collect();
    sorted.sort();
    sorted.into_iter().map(|((_, v), k)| (k, v)).collect()
}

fn state(m: &LwwMap) -> BTreeMap<String, Option<String>> {
    m.entries().iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
}

fn kv_strategy(max: usize) -> impl Strategy<Value = BTreeMap<String, u8>> {
    proptest::collection::btree_map("[a-z]{1,3}", any::<u8>(), 0..=max)
}

fn tree(m: &BTreeMap<String, u8>) -> MerkleTree {
    let items: Vec<(String, [u8; 1])> = m.iter().map(|(k, v)| (k.clone(), [*v])).collect();
    merkle_build(&items).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn lww_merge_commutes(a in proptest::collection::vec(put_strategy(), 0..8), b in proptest::collection::vec(put_strategy(), 0..8)) {
        let (x, y) = (apply(&a), apply(&b));
        prop_assert_eq!(lww_merge(&x, &y), lww_merge(&y, &x));
    }

    #[test]
    fn lww_merge_associates(
        a in proptest::collection::vec(put_strategy(), 0..6),
        b in proptest::collection::vec(put_strategy(), 0..6),
        c in proptest::collection::vec(put_strategy(), 0..6),
    ) {
        let (x, y, z) = (apply(&a), apply(&b), apply(&c));
        prop_assert_eq!(lww_merge(&lww_merge(&x, &y), &z), lww_merge(&x, &lww_merge(&y, &z)));
    }

    #[test]
    fn lww_merge_idempotent(a in proptest::collection::vec(put_strategy(), 0..8)) {
        let x = apply(&a);
        prop_assert_eq!(lww_merge(&x, &x), x);
    }

    #[test]
    fn lww_matches_sort_oracle(puts in proptest::collection::vec(put_strategy(), 0..12)) {
        prop_assert_eq!(state(&apply(&puts)), lww_oracle(&puts));
    }

    #[test]
    fn lww_split_replicas_converge(puts in proptest::collection::vec(put_strategy(), 0..12), mask in any::<u16>()) {
        let (left, right): (Vec<_>, Vec<_>) = puts.iter().enumerate().partition(|(i, _)| mask >> (i % 16) & 1 == 1);
        let l: Vec<Put> = left.into_iter().map(|(_, p)| *p).collect();
        let r: Vec<Put> = right.into_iter().map(|(_, p)| *p).collect();
        prop_assert_eq!(lww_merge(&apply(&l), &apply(&r)), apply(&puts));
    }

    #[test]
    fn vector_clocks_match_happens_before(seed in any::<u64>(), n in 1usize..=5, events in 0usize..=20) {
        let exec = Execution::random(n, events, &mut ChaCha8Rng::seed_from_u64(seed));
        let hb = exec.happens_before();
        let vs = exec.vector_stamps();
        for i in 0..vs.len() {
            for j in 0..vs.len() {
                let expected = if i == j {
                    CausalOrder::Equal
                } else if hb[i][j] {
                    CausalOrder::Before
                } else if hb[j][i] {
                    CausalOrder::After
                } else {
                    CausalOrder::Concurrent
                };
                prop_assert_eq!(vc_compare(&vs[i], &vs[j]).unwrap(), expected);
            }
        }
    }

    #[test]
    fn lamport_respects_causal_edges(seed in any::<u64>(), n in 1usize..=5, events in 0usize..=20) {
        let exec = Execution::random(n, events, &mut ChaCha8Rng::seed_from_u64(seed));
        let hb = exec.happens_before();
        let standard = exec.lamport_stamps(MergeRule::Standard);
        let tick_or_max = exec.lamport_stamps(MergeRule::TickOrMax);
        for i in 0..hb.len() {
            for j in 0..hb.len() {
                if hb[i][j] {
                    prop_assert!(standard[i].value < standard[j].value);
                    prop_assert!(tick_or_max[i].value <= tick_or_max[j].value);
                }
            }
        }
    }

    #[test]
    fn merkle_diff_is_set_difference(a in kv_strategy(64), edits in proptest::collection::vec((any::<prop::sample::Index>(), 1u8..=255), 0..10)) {
        let mut b = a.clone();
        let keys: Vec<String> = a.keys().cloned().collect();
        for (i, delta) in &edits {
            if !keys.is_empty() {
                let v = b.get_mut(&keys[i.index(keys.len())]).unwrap();
                *v = v.wrapping_add(*delta);
            }
        }
        let universe: BTreeSet<String> = a.keys().cloned().collect();
        let expected: BTreeSet<String> = universe.iter().filter(|k| a[*k] != b[*k]).cloned().collect();
        let (ta, tb) = (tree(&a), tree(&b));
        let d = merkle_diff(&ta, &tb).unwrap();
        prop_assert_eq!(&d.keys, &expected);
        prop_assert!(d.comparisons <= 2 * expected.len() * ta.depth() + 2);
    }

    #[test]
    fn merkle_root_depends_on_content_not_build(a in kv_strategy(40)) {
        prop_assert_eq!(tree(&a).root(), tree(&a.clone()).root());
        if let Some((k, v)) = a.iter().next() {
            let mut b = a.clone();
            b.insert(k.clone(), v.wrapping_add(1));
            prop_assert_ne!(tree(&a).root(), tree(&b).root());
        }
    }

    #[test]
    fn merkle_proofs_round_trip(a in kv_strategy(40).prop_filter("non-empty", |m| !m.is_empty()), pick in any::<prop::sample::Index>()) {
        let t = tree(&a);
        let (k, v) = a.iter().nth(pick.index(a.len())).unwrap();
        let proof = merkle_audit_proof(&t, k).unwrap();
        prop_assert!(merkle_verify_audit(&t.root(), k, &[*v], &proof));
        prop_assert!(!merkle_verify_audit(&t.root(), k, &[v.wrapping_add(1)], &proof));
        let old_n = 1 + pick.index(a.len());
        let prefix: BTreeMap<String, u8> = a.iter().take(old_n).map(|(k, v)| (k.clone(), *v)).collect();
        let cp = merkle_consistency_proof(&t, old_n).unwrap();
        prop_assert!(merkle_verify_consistency(&tree(&prefix).root(), &t.root(), &cp));
    }

    #[test]
    fn quorums_intersect(n in 1usize..200) {
        let q = quorum_size(n).unwrap();
        prop_assert!(2 * q > n);
        prop_assert!(q <= n);
    }

    #[test]
    fn ballots_totally_ordered(a in (0u64..5, 0usize..5), b in (0u64..5, 0usize..5)) {
        let (x, y) = (Ballot::new(a.0, a.1), Ballot::new(b.0, b.1));
        prop_assert_eq!(x == y, a == b);
        prop_assert_eq!(x < y, a < b);
    }

    #[test]
    fn prefix_check_accepts_prefixes(values in proptest::collection::vec("[a-c]", 0..8), cuts in proptest::collection::vec(any::<prop::sample::Index>(), 1..4)) {
        let logs: Vec<ReplicatedLog> = cuts
            .iter()
            .map(|c| ReplicatedLog::from_entries(values[..c.index(values.len() + 1)].to_vec()))
            .collect();
        prop_assert!(prefix_check(&logs));
        if let Some(last) = values.last() {
            let mut forked = values.clone();
            *forked.last_mut().unwrap() = format!("{last}!");
            prop_assert!(!prefix_check(&[ReplicatedLog::from_entries(values.clone()), ReplicatedLog::from_entries(forked)]));
        }
    }
}
