//! Merkle tree over sorted `(key, value)` items with audit and consistency
//! proofs. The shape splits `n` leaves at the largest power of two below `n`,
//! so a tree over a prefix of the leaves is a left part of the bigger tree.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Hash = [u8; 32];

const LEAF: u8 = 0x00;
const NODE: u8 = 0x01;

fn sha(parts: &[&[u8]]) -> Hash {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn value_hash(value: &[u8]) -> Hash {
    sha(&[value])
}

/// Stand-in value hash for keys a replica does not hold.
pub fn absent_hash() -> Hash {
    sha(&[b"absent"])
}

pub fn leaf_hash(key: &str, value_hash: &Hash) -> Hash {
    let len = (key.len() as u64).to_be_bytes();
    sha(&[&[LEAF], &len, key.as_bytes(), value_hash])
}

pub fn node_hash(left: &Hash, right: &Hash) -> Hash {
    sha(&[&[NODE], left, right])
}

fn split(n: usize) -> usize {
    debug_assert!(n > 1);
    1 << (usize::BITS - 1 - (n - 1).leading_zeros())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    keys: Vec<String>,
    leaves: Vec<Hash>,
}

impl MerkleTree {
    /// Builds from items whose keys are sorted and unique.
    pub fn build<K: AsRef<str>, V: AsRef<[u8]>>(items: &[(K, V)]) -> Result<Self> {
        let hashed: Vec<(String, Hash)> = items
            .iter()
            .map(|(k, v)| (k.as_ref().to_string(), value_hash(v.as_ref())))
            .collect();
        Self::from_value_hashes(hashed)
    }

    pub fn from_value_hashes(items: Vec<(String, Hash)>) -> Result<Self> {
        for w in items.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateKey(w[0].0.clone()));
            }
            if w[0].0 > w[1].0 {
                return Err(Error::UnsortedKeys(format!("{:?} before {:?}", w[0].0, w[1].0)));
            }
        }
        let leaves = items.iter().map(|(k, h)| leaf_hash(k, h)).collect();
        Ok(Self {
            keys: items.into_iter().map(|(k, _)| k).collect(),
            leaves,
        })
    }

    /// Tree over `universe` where keys missing from `lookup` get the absent hash.
    pub fn padded<'a>(universe: &BTreeSet<String>, lookup: impl Fn(&str) -> Option<&'a [u8]>) -> Self {
        let items = universe
            .iter()
            .map(|k| (k.clone(), lookup(k).map_or_else(absent_hash, value_hash)))
            .collect();
        Self::from_value_hashes(items).expect("a set is sorted and unique")
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn root(&self) -> Hash {
        subtree_root(&self.leaves)
    }

    pub fn depth(&self) -> usize {
        let mut d = 0;
        while (1usize << d) < self.leaves.len() {
            d += 1;
        }
        d
    }

    pub fn audit_proof(&self, key: &str) -> Result<AuditProof> {
        let index = self
            .keys
            .binary_search_by(|k| k.as_str().cmp(key))
            .map_err(|_| Error::KeyNotFound(key.to_string()))?;
        let mut path = Vec::new();
        audit_path(index, &self.leaves, &mut path);
        Ok(AuditProof {
            index,
            tree_size: self.leaves.len(),
            path,
        })
    }

    pub fn consistency_proof(&self, old_size: usize) -> Result<ConsistencyProof> {
        let n = self.leaves.len();
        if old_size == 0 || old_size > n {
            return Err(Error::ProofSize { old: old_size, current: n });
        }
        let mut path = Vec::new();
        subproof(old_size, &self.leaves, true, &mut path);
        Ok(ConsistencyProof {
            old_size,
            new_size: n,
            path,
        })
    }
}

fn subtree_root(leaves: &[Hash]) -> Hash {
    match leaves.len() {
        0 => sha(&[]),
        1 => leaves[0],
        n => {
            let k = split(n);
            node_hash(&subtree_root(&leaves[..k]), &subtree_root(&leaves[k..]))
        }
    }
}

fn audit_path(m: usize, leaves: &[Hash], out: &mut Vec<Hash>) {
    let n = leaves.len();
    if n <= 1 {
        return;
    }
    let k = split(n);
    if m < k {
        audit_path(m, &leaves[..k], out);
        out.push(subtree_root(&leaves[k..]));
    } else {
        audit_path(m - k, &leaves[k..], out);
        out.push(subtree_root(&leaves[..k]));
    }
}

fn subproof(m: usize, leaves: &[Hash], whole: bool, out: &mut Vec<Hash>) {
    let n = leaves.len();
    if m == n {
        if !whole {
            out.push(subtree_root(leaves));
        }
        return;
    }
    let k = split(n);
    if m <= k {
        subproof(m, &leaves[..k], whole, out);
        out.push(subtree_root(&leaves[k..]));
    } else {
        subproof(m - k, &leaves[k..], false, out);
        out.push(subtree_root(&leaves[..k]));
    }
}

pub fn merkle_build<K: AsRef<str>, V: AsRef<[u8]>>(items: &[(K, V)]) -> Result<MerkleTree> {
    MerkleTree::build(items)
}

pub fn merkle_root(tree: &MerkleTree) -> Hash {
    tree.root()
}

/// Sibling hashes from a leaf up to the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditProof {
    pub index: usize,
    pub tree_size: usize,
    pub path: Vec<Hash>,
}

pub fn merkle_audit_proof(tree: &MerkleTree, key: &str) -> Result<AuditProof> {
    tree.audit_proof(key)
}

pub fn merkle_verify_audit(root: &Hash, key: &str, value: &[u8], proof: &AuditProof) -> bool {
    if proof.index >= proof.tree_size {
        return false;
    }
    let (mut fn_, mut sn) = (proof.index, proof.tree_size - 1);
    let mut r = leaf_hash(key, &value_hash(value));
    for p in &proof.path {
        if sn == 0 {
            return false;
        }
        if fn_ & 1 == 1 || fn_ == sn {
            r = node_hash(p, &r);
            while fn_ & 1 == 0 && fn_ != 0 {
                fn_ >>= 1;
                sn >>= 1;
            }
        } else {
            r = node_hash(&r, p);
        }
        fn_ >>= 1;
        sn >>= 1;
    }
    sn == 0 && r == *root
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyProof {
    pub old_size: usize,
    pub new_size: usize,
    pub path: Vec<Hash>,
}

pub fn merkle_consistency_proof(tree: &MerkleTree, old_leaf_count: usize) -> Result<ConsistencyProof> {
    tree.consistency_proof(old_leaf_count)
}

pub fn merkle_verify_consistency(old_root: &Hash, new_root: &Hash, proof: &ConsistencyProof) -> bool {
    let (first, second) = (proof.old_size, proof.new_size);
    if first == 0 || first > second {
        return false;
    }
    if first == second {
        return proof.path.is_empty() && old_root == new_root;
    }
    let mut path: Vec<Hash> = Vec::with_capacity(proof.path.len() + 1);
    if first.is_power_of_two() {
        path.push(*old_root);
    }
    path.extend_from_slice(&proof.path);
    let Some((first_hash, rest)) = path.split_first() else {
        return false;
    };
    let (mut fn_, mut sn) = (first - 1, second - 1);
    while fn_ & 1 == 1 {
        fn_ >>= 1;
        sn >>= 1;
    }
    let (mut fr, mut sr) = (*first_hash, *first_hash);
    for c in rest {
        if sn == 0 {
            return false;
        }
        if fn_ & 1 == 1 || fn_ == sn {
            fr = node_hash(c, &fr);
            sr = node_hash(c, &sr);
            while fn_ & 1 == 0 && fn_ != 0 {
                fn_ >>= 1;
                sn >>= 1;
            }
        } else {
            sr = node_hash(&sr, c);
        }
        fn_ >>= 1;
        sn >>= 1;
    }
    fr == *old_root && sr == *new_root && sn == 0
}

/// Keys whose leaves differ, found by descending only into subtrees whose
/// hashes differ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffResult {
    pub keys: BTreeSet<String>,
    pub comparisons: usize,
}

pub fn merkle_diff(a: &MerkleTree, b: &MerkleTree) -> Result<DiffResult> {
    if a.keys != b.keys {
        return Err(Error::Config("diffed trees must cover the same keys".into()));
    }
    let mut out = DiffResult {
        keys: BTreeSet::new(),
        comparisons: 0,
    };
    diff_range(&a.leaves, &b.leaves, &a.keys, &mut out);
    Ok(out)
}

fn diff_range(a: &[Hash], b: &[Hash], keys: &[String], out: &mut DiffResult) {
    if a.is_empty() {
        return;
    }
    out.comparisons += 1;
    if subtree_root(a) == subtree_root(b) {
        return;
    }
    if a.len() == 1 {
        out.keys.insert(keys[0].clone());
        return;
    }
    let k = split(a.len());
    diff_range(&a[..k], &b[..k], &keys[..k], out);
    diff_range(&a[k..], &b[k..], &keys[k..], out);
}
